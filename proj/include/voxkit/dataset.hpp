#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "voxkit/augment.hpp"
#include "voxkit/common.hpp"
#include "voxkit/rng.hpp"
#include "voxkit/volume.hpp"

namespace voxkit {

// ---------------------------------------------------------------------------
// Manifest: tab-separated table (id, path, label, cohort_tag) with a header.
// ---------------------------------------------------------------------------

struct SampleRecord {
  std::string id;
  std::string volume_path;
  int label = 0;  // CN = 0, AD = 1
  std::string cohort_tag;
};

inline const char* label_name(int label) { return label == 1 ? "AD" : "CN"; }

inline int parse_label(const std::string& s) {
  if (s == "CN" || s == "0") return 0;
  if (s == "AD" || s == "1") return 1;
  throw ParseError("unknown label '" + s + "' (expected CN, AD, 0 or 1)");
}

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string::size_type pos = 0;
  for (;;) {
    const auto tab = line.find('\t', pos);
    if (tab == std::string::npos) {
      out.push_back(line.substr(pos));
      return out;
    }
    out.push_back(line.substr(pos, tab - pos));
    pos = tab + 1;
  }
}

inline std::vector<SampleRecord> load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw MissingFile("manifest not found: " + path);
  std::string line;
  if (!std::getline(is, line)) throw ParseError("empty manifest: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_tabs(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "path" || header[2] != "label")
    throw ParseError("manifest header must be: id<TAB>path<TAB>label[<TAB>cohort_tag]");
  std::vector<SampleRecord> records;
  std::unordered_set<std::string> seen;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_tabs(line);
    if (cells.size() < 3)
      throw ParseError("manifest row " + std::to_string(row) + ": expected at least 3 columns");
    SampleRecord rec;
    rec.id = cells[0];
    rec.volume_path = cells[1];
    rec.label = parse_label(cells[2]);
    rec.cohort_tag = cells.size() > 3 ? cells[3] : "";
    if (rec.id.empty()) throw ParseError("manifest row " + std::to_string(row) + ": empty id");
    if (!seen.insert(rec.id).second) throw DuplicateId("duplicate manifest id: " + rec.id);
    records.push_back(std::move(rec));
  }
  return records;
}

inline void save_manifest(const std::string& path, const std::vector<SampleRecord>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write manifest: " + path);
  os << "id\tpath\tlabel\tcohort_tag\n";
  for (const auto& r : records)
    os << r.id << '\t' << r.volume_path << '\t' << label_name(r.label) << '\t' << r.cohort_tag
       << '\n';
}

// ---------------------------------------------------------------------------
// Stratified K-fold with rotating validation fold.
// ---------------------------------------------------------------------------

struct FoldPlan {
  int k = 7;
  std::uint64_t seed = 0;
  std::vector<std::string> ids;  // manifest order
  std::vector<int> fold_of;      // parallel to ids
};

/// Per class: seeded shuffle, then deal contiguous chunks so remainder
/// samples land in the lowest-indexed folds (the last fold absorbs the
/// deficit, e.g. 307/243 over 7 folds leaves fold 6 at 43 CN + 34 AD).
inline FoldPlan stratified_kfold(const std::vector<SampleRecord>& records, int k,
                                 std::uint64_t seed) {
  if (k < 2) throw InvalidSpec("stratified_kfold: k must be at least 2");
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.ids.reserve(records.size());
  for (const auto& r : records) plan.ids.push_back(r.id);
  plan.fold_of.assign(records.size(), -1);

  SeededRng rng(seed);
  for (int cls = 0; cls < 2; ++cls) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (records[i].label == cls) idx.push_back(i);
    if (idx.size() < static_cast<std::size_t>(k))
      throw TooFewSamples(std::string("class ") + label_name(cls) + " has " +
                          std::to_string(idx.size()) + " samples, need at least " +
                          std::to_string(k));
    rng.shuffle(idx);
    const std::size_t base = idx.size() / k, rem = idx.size() % k;
    std::size_t cursor = 0;
    for (int f = 0; f < k; ++f) {
      const std::size_t take = base + (static_cast<std::size_t>(f) < rem ? 1 : 0);
      for (std::size_t j = 0; j < take; ++j) plan.fold_of[idx[cursor++]] = f;
    }
  }
  return plan;
}

struct SplitIds {
  std::vector<std::string> train, val, test;
};

/// test = fold f, validation = fold (f+1) mod k, training = the rest.
inline SplitIds materialize_split(const FoldPlan& plan, int test_fold) {
  if (test_fold < 0 || test_fold >= plan.k)
    throw InvalidSpec("materialize_split: test fold out of range");
  const int val_fold = (test_fold + 1) % plan.k;
  SplitIds out;
  for (std::size_t i = 0; i < plan.ids.size(); ++i) {
    const int f = plan.fold_of[i];
    if (f == test_fold)
      out.test.push_back(plan.ids[i]);
    else if (f == val_fold)
      out.val.push_back(plan.ids[i]);
    else
      out.train.push_back(plan.ids[i]);
  }
  return out;
}

inline void save_fold_plan(const std::string& path, const FoldPlan& plan) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write fold plan: " + path);
  os << "# k=" << plan.k << " seed=" << plan.seed << "\n";
  os << "id\tfold\n";
  for (std::size_t i = 0; i < plan.ids.size(); ++i)
    os << plan.ids[i] << '\t' << plan.fold_of[i] << '\n';
}

inline FoldPlan load_fold_plan(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw MissingFile("fold plan not found: " + path);
  FoldPlan plan;
  std::string line;
  if (!std::getline(is, line) || line.rfind("# k=", 0) != 0)
    throw ParseError("fold plan missing '# k=' header: " + path);
  {
    std::istringstream ls(line.substr(4));
    std::string seed_part;
    ls >> plan.k >> seed_part;
    if (ls.fail() || seed_part.rfind("seed=", 0) != 0)
      throw ParseError("malformed fold plan header: " + line);
    plan.seed = std::stoull(seed_part.substr(5));
  }
  if (!std::getline(is, line)) throw ParseError("fold plan missing column header");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split_tabs(line);
    if (cells.size() != 2) throw ParseError("malformed fold plan row: " + line);
    plan.ids.push_back(cells[0]);
    plan.fold_of.push_back(std::stoi(cells[1]));
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Synthetic volumes: a smooth ellipsoidal body whose central cavity is
// enlarged for class 1 (an atrophy proxy), with per-sample jitter and
// additive Gaussian noise.
// ---------------------------------------------------------------------------

struct SyntheticSpec {
  int nx = 32, ny = 32, nz = 25;
  int n_class0 = 70, n_class1 = 70;
  double cavity_radius = 0.30;  // class-0 cavity, relative to the body radius
  double delta = 0.25;          // class-1 cavity = cavity_radius + delta
  double sigma = 0.0;           // additive noise standard deviation
  double jitter = 0.05;         // center offset bound, fraction of each axis
  std::uint64_t seed = 0;
};

inline void validate_synthetic(const SyntheticSpec& spec) {
  if (spec.nx < 1 || spec.ny < 1 || spec.nz < 1)
    throw InvalidSpec("synthetic: dims must be positive");
  if (spec.n_class0 < 0 || spec.n_class1 < 0)
    throw InvalidSpec("synthetic: per-class counts must be nonnegative");
  if (spec.sigma < 0) throw InvalidSpec("synthetic: noise sigma must be nonnegative");
  if (!(spec.cavity_radius > 0) || spec.delta < 0 ||
      spec.cavity_radius + spec.delta >= 1.0)
    throw InvalidSpec("synthetic: cavity radii must stay inside the body");
}

namespace detail {

inline double smooth_edge(double t, double width) { return 0.5 * (1.0 + std::tanh(t / width)); }

constexpr double kBodyRadiusFrac = 0.38;  // body semiaxis as a fraction of each dim
constexpr double kEdgeWidth = 0.12;       // transition width in body-radius units

template <class T>
Volume3D<T> synthetic_volume(const SyntheticSpec& spec, double cavity_rel, SeededRng& rng) {
  Volume3D<T> v(spec.nx, spec.ny, spec.nz);
  // jitter draw order: center x/y/z, then radius scale, then per-voxel noise
  const double jx = rng.uniform(-spec.jitter, spec.jitter) * spec.nx;
  const double jy = rng.uniform(-spec.jitter, spec.jitter) * spec.ny;
  const double jz = rng.uniform(-spec.jitter, spec.jitter) * spec.nz;
  const double scale = rng.uniform(0.9, 1.1);
  const double cx = (spec.nx - 1) / 2.0 + jx;
  const double cy = (spec.ny - 1) / 2.0 + jy;
  const double cz = (spec.nz - 1) / 2.0 + jz;
  const double ax = kBodyRadiusFrac * spec.nx * scale;
  const double ay = kBodyRadiusFrac * spec.ny * scale;
  const double az = kBodyRadiusFrac * spec.nz * scale;
  std::size_t n = 0;
  for (int i = 0; i < spec.nx; ++i)
    for (int j = 0; j < spec.ny; ++j)
      for (int k = 0; k < spec.nz; ++k, ++n) {
        const double ux = (i - cx) / ax, uy = (j - cy) / ay, uz = (k - cz) / az;
        const double r = std::sqrt(ux * ux + uy * uy + uz * uz);
        const double body = smooth_edge(1.0 - r, kEdgeWidth);
        const double cav = smooth_edge(cavity_rel - r, kEdgeWidth);
        double val = body * (1.0 - cav);
        if (spec.sigma > 0) val += spec.sigma * rng.normal();
        v.data[n] = static_cast<T>(val);
      }
  return v;
}

}  // namespace detail

/// Deterministic in spec.seed; each sample draws from its own derived stream,
/// so volumes do not depend on generation order.
template <class T = float>
std::vector<LabeledVolume<T>> generate_synthetic(const SyntheticSpec& spec) {
  validate_synthetic(spec);
  std::vector<LabeledVolume<T>> out;
  out.reserve(static_cast<std::size_t>(spec.n_class0) + spec.n_class1);
  for (int cls = 0; cls < 2; ++cls) {
    const int count = cls == 0 ? spec.n_class0 : spec.n_class1;
    const double cavity = cls == 0 ? spec.cavity_radius : spec.cavity_radius + spec.delta;
    for (int i = 0; i < count; ++i) {
      SeededRng rng(derive_seed(spec.seed, {0x73796eULL /*"syn"*/, static_cast<std::uint64_t>(cls),
                                            static_cast<std::uint64_t>(i)}));
      char id[32];
      std::snprintf(id, sizeof id, "syn-%s-%03d", cls == 0 ? "cn" : "ad", i);
      out.push_back({detail::synthetic_volume<T>(spec, cavity, rng), cls, id});
    }
  }
  return out;
}

/// Mean intensity over the nominal cavity annulus (relative radius between
/// the two class cavity radii). Class 1's enlarged cavity empties this
/// region, so low values indicate class 1.
template <class T>
double cavity_statistic(const Volume3D<T>& v, const SyntheticSpec& spec) {
  const double cx = (spec.nx - 1) / 2.0, cy = (spec.ny - 1) / 2.0, cz = (spec.nz - 1) / 2.0;
  const double ax = detail::kBodyRadiusFrac * spec.nx;
  const double ay = detail::kBodyRadiusFrac * spec.ny;
  const double az = detail::kBodyRadiusFrac * spec.nz;
  const double lo = spec.cavity_radius, hi = spec.cavity_radius + spec.delta;
  double sum = 0;
  std::size_t count = 0, n = 0;
  for (int i = 0; i < v.nx; ++i)
    for (int j = 0; j < v.ny; ++j)
      for (int k = 0; k < v.nz; ++k, ++n) {
        const double ux = (i - cx) / ax, uy = (j - cy) / ay, uz = (k - cz) / az;
        const double r = std::sqrt(ux * ux + uy * uy + uz * uz);
        if (r >= lo && r < hi) {
          sum += static_cast<double>(v.data[n]);
          ++count;
        }
      }
  if (count == 0) throw DegenerateInput("cavity_statistic: empty annulus region");
  return sum / static_cast<double>(count);
}

/// Best-threshold accuracy of the cavity-statistic rule (samples below the
/// threshold called class 1). This is the oracle the desk-scale study
/// compares trained models against.
template <class T>
double synthetic_oracle_accuracy(const std::vector<LabeledVolume<T>>& samples,
                                 const SyntheticSpec& spec) {
  if (samples.empty()) throw EmptySplit("synthetic_oracle_accuracy: no samples");
  std::vector<std::pair<double, int>> stats;
  stats.reserve(samples.size());
  for (const auto& s : samples) stats.emplace_back(cavity_statistic(s.vol, spec), s.label);
  std::sort(stats.begin(), stats.end());
  // sweep thresholds between consecutive statistics; below-threshold -> class 1
  std::size_t best = 0;
  const std::size_t total1 =
      static_cast<std::size_t>(std::count_if(stats.begin(), stats.end(),
                                             [](const auto& p) { return p.second == 1; }));
  std::size_t ones_below = 0;
  // threshold below everything: all called class 0
  best = stats.size() - total1;
  for (std::size_t i = 0; i < stats.size(); ++i) {
    ones_below += stats[i].second == 1 ? 1 : 0;
    // threshold just above stats[i]: first i+1 called class 1
    const std::size_t correct = ones_below + (stats.size() - total1 - (i + 1 - ones_below));
    best = std::max(best, correct);
  }
  return static_cast<double>(best) / static_cast<double>(stats.size());
}

}  // namespace voxkit
