#pragma once

#include <cmath>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "voxkit/common.hpp"
#include "voxkit/rng.hpp"
#include "voxkit/volume.hpp"

namespace voxkit {

template <class T>
struct LabeledVolume {
  Volume3D<T> vol;
  int label = 0;
  std::string id;
};

enum class Strategy { A, B, C };

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::A: return "A";
    case Strategy::B: return "B";
    case Strategy::C: return "C";
  }
  return "?";
}

inline Strategy strategy_from_string(const std::string& s) {
  if (s == "A" || s == "a") return Strategy::A;
  if (s == "B" || s == "b") return Strategy::B;
  if (s == "C" || s == "c") return Strategy::C;
  throw ConfigError("unknown augmentation strategy: " + s);
}

enum class TransformKind { Zoom, Shift, Rotation, All };

inline const char* to_string(TransformKind k) {
  switch (k) {
    case TransformKind::Zoom: return "zoom";
    case TransformKind::Shift: return "shift";
    case TransformKind::Rotation: return "rotation";
    case TransformKind::All: return "all";
  }
  return "?";
}

/// One draw of the three affine transform parameters. Identity is
/// zoom = 1, shift = 0, angles = 0.
struct AugmentParams {
  double zoom = 1.0;
  std::array<double, 3> shift = {0, 0, 0};       // per-axis, fraction of axis length
  std::array<double, 3> angles_deg = {0, 0, 0};  // per-axis rotation angles

  bool is_identity() const {
    return zoom == 1.0 && shift == std::array<double, 3>{0, 0, 0} &&
           angles_deg == std::array<double, 3>{0, 0, 0};
  }
};

/// Draw ranges. shift_in_voxels switches the shift unit from
/// fraction-of-axis-length to voxels.
struct AugmentBounds {
  double zoom_lo = 0.8;
  double zoom_hi = 1.2;
  double shift_bound = 0.4;
  double angle_bound_deg = 5.0;
  bool shift_in_voxels = false;
  bool include_originals = true;
};

/// Uniform draw within the bounds for the selected kind; unselected fields
/// stay at identity. Draw order: zoom, shift x/y/z, angles x/y/z.
inline AugmentParams sample_params(TransformKind kind, SeededRng& rng,
                                   const AugmentBounds& b = {}) {
  AugmentParams p;
  const bool all = kind == TransformKind::All;
  if (all || kind == TransformKind::Zoom) p.zoom = rng.uniform(b.zoom_lo, b.zoom_hi);
  if (all || kind == TransformKind::Shift) {
    for (int a = 0; a < 3; ++a) {
      double s;
      do {
        s = rng.uniform(-b.shift_bound, b.shift_bound);
      } while (std::abs(s) >= b.shift_bound);  // keep the bound strict
      p.shift[a] = s;
    }
  }
  if (all || kind == TransformKind::Rotation)
    for (int a = 0; a < 3; ++a) p.angles_deg[a] = rng.uniform(-b.angle_bound_deg, b.angle_bound_deg);
  return p;
}

namespace detail {

inline std::array<double, 9> rotation_matrix(const std::array<double, 3>& angles_deg) {
  constexpr double to_rad = std::numbers::pi / 180.0;
  const double ax = angles_deg[0] * to_rad, ay = angles_deg[1] * to_rad,
               az = angles_deg[2] * to_rad;
  const double cx = std::cos(ax), sx = std::sin(ax);
  const double cy = std::cos(ay), sy = std::sin(ay);
  const double cz = std::cos(az), sz = std::sin(az);
  const std::array<double, 9> rx = {1, 0, 0, 0, cx, -sx, 0, sx, cx};
  const std::array<double, 9> ry = {cy, 0, sy, 0, 1, 0, -sy, 0, cy};
  const std::array<double, 9> rz = {cz, -sz, 0, sz, cz, 0, 0, 0, 1};
  auto mul = [](const std::array<double, 9>& a, const std::array<double, 9>& b) {
    std::array<double, 9> r{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) r[3 * i + j] += a[3 * i + k] * b[3 * k + j];
    return r;
  };
  return mul(rz, mul(ry, rx));  // Rz * Ry * Rx
}

}  // namespace detail

/// Composition about the volume center, applied scale -> rotate -> translate:
///   y = Rz Ry Rx * zoom * (x - c) + c + shift .* dims
inline AffineTransform to_affine(const AugmentParams& p, int nx, int ny, int nz,
                                 bool shift_in_voxels = false) {
  if (nx <= 0 || ny <= 0 || nz <= 0) throw InvalidSpec("to_affine: dims must be positive");
  AffineTransform t;
  t.center = {(nx - 1) / 2.0, (ny - 1) / 2.0, (nz - 1) / 2.0};
  t.linear = detail::rotation_matrix(p.angles_deg);
  for (double& m : t.linear) m *= p.zoom;
  const double dims[3] = {static_cast<double>(nx), static_cast<double>(ny),
                          static_cast<double>(nz)};
  for (int a = 0; a < 3; ++a)
    t.translation[a] = shift_in_voxels ? p.shift[a] : p.shift[a] * dims[a];
  return t;
}

/// One row of the augmentation log, enough to replay the draw exactly.
struct AugmentRecord {
  std::string source_id;
  std::string out_id;
  Strategy strategy = Strategy::A;
  TransformKind kind = TransformKind::All;
  AugmentParams params;
  std::uint64_t seed = 0;        // rng stream seed for the whole set
  std::uint64_t draw_index = 0;  // ordinal of this record in the stream
};

template <class T>
struct AugmentedSet {
  std::vector<LabeledVolume<T>> samples;
  std::vector<AugmentRecord> log;
};

/// Expand a training set per strategy:
///   A: one all-transform warp per sample            (N new)
///   B: zoom-only, shift-only, rotation-only warps   (3N new)
///   C: three independent all-transform warps        (3N new)
/// Originals are kept in front (configurable via bounds.include_originals).
/// Augmented volumes keep the input dims and labels.
template <class T>
AugmentedSet<T> augment_set(const std::vector<LabeledVolume<T>>& samples, Strategy strategy,
                            SeededRng& rng, const AugmentBounds& bounds = {}) {
  if (samples.empty()) throw EmptySplit("augment_set: input set is empty");
  AugmentedSet<T> out;
  if (bounds.include_originals) out.samples = samples;

  std::vector<TransformKind> kinds;
  switch (strategy) {
    case Strategy::A: kinds = {TransformKind::All}; break;
    case Strategy::B:
      kinds = {TransformKind::Zoom, TransformKind::Shift, TransformKind::Rotation};
      break;
    case Strategy::C:
      kinds = {TransformKind::All, TransformKind::All, TransformKind::All};
      break;
  }

  std::uint64_t draw_index = 0;
  for (const auto& s : samples) {
    int variant = 0;
    for (TransformKind kind : kinds) {
      AugmentRecord rec;
      rec.source_id = s.id;
      rec.strategy = strategy;
      rec.kind = kind;
      rec.seed = rng.seed();
      rec.draw_index = draw_index++;
      rec.params = sample_params(kind, rng, bounds);
      rec.out_id = s.id + "/aug" + std::to_string(variant) + "-" + to_string(kind);

      const AffineTransform t =
          to_affine(rec.params, s.vol.nx, s.vol.ny, s.vol.nz, bounds.shift_in_voxels);
      LabeledVolume<T> aug;
      aug.vol = warp_affine(s.vol, t);
      aug.label = s.label;
      aug.id = rec.out_id;
      out.samples.push_back(std::move(aug));
      out.log.push_back(std::move(rec));
      ++variant;
    }
  }
  return out;
}

/// Tab-separated log, one record per augmented sample.
inline void write_augment_log(const std::string& path, const std::vector<AugmentRecord>& log) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "source_id\tout_id\tstrategy\tkind\tzoom\tshift_x\tshift_y\tshift_z\t"
        "angle_x\tangle_y\tangle_z\tseed\tdraw_index\n";
  os.precision(17);
  for (const auto& r : log) {
    os << r.source_id << '\t' << r.out_id << '\t' << to_string(r.strategy) << '\t'
       << to_string(r.kind) << '\t' << r.params.zoom << '\t' << r.params.shift[0] << '\t'
       << r.params.shift[1] << '\t' << r.params.shift[2] << '\t' << r.params.angles_deg[0]
       << '\t' << r.params.angles_deg[1] << '\t' << r.params.angles_deg[2] << '\t' << r.seed
       << '\t' << r.draw_index << '\n';
  }
}

}  // namespace voxkit
