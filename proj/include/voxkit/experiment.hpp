#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "voxkit/augment.hpp"
#include "voxkit/checkpoint.hpp"
#include "voxkit/common.hpp"
#include "voxkit/dataset.hpp"
#include "voxkit/metrics.hpp"
#include "voxkit/model.hpp"
#include "voxkit/train.hpp"
#include "voxkit/volume.hpp"

namespace voxkit {

// ---------------------------------------------------------------------------
// Plan and run identity
// ---------------------------------------------------------------------------

struct ExperimentPlan {
  std::vector<Strategy> strategies{Strategy::A, Strategy::B, Strategy::C};
  std::vector<int> depths{4, 6, 8, 10, 12};
  int k = 7;
  int trials = 10;
  std::uint64_t master_seed = 0;
  double dropout_p = 0.0;
  std::vector<double> dropout_grid{0.0, 0.1, 0.25, 0.5};
  TrainConfig train;
  AugmentBounds bounds;

  void validate() const {
    if (strategies.empty() || depths.empty()) throw InvalidSpec("plan: empty grid axes");
    if (trials < 1) throw InvalidSpec("plan: trials must be at least 1");
    if (k < 2) throw InvalidSpec("plan: k must be at least 2");
    validate_train_config(train);
  }
};

struct RunKey {
  Strategy strategy = Strategy::A;
  int depth = 4;
  int fold = 0;
  int trial = 0;
  double dropout_p = 0.0;

  // dropout enters the identity in mills so the key is integral
  int dropout_mills() const { return static_cast<int>(std::lround(dropout_p * 1000.0)); }

  std::string id() const {
    std::ostringstream os;
    os << to_string(strategy) << "-d" << depth << "-f" << fold << "-t" << trial << "-p"
       << dropout_mills();
    return os.str();
  }

  bool operator==(const RunKey& o) const {
    return strategy == o.strategy && depth == o.depth && fold == o.fold && trial == o.trial &&
           dropout_mills() == o.dropout_mills();
  }
};

/// Per-run seed: master seed mixed with the run tuple. Injective over the
/// grid (collision-checked in tests).
inline std::uint64_t run_seed(std::uint64_t master, const RunKey& key) {
  return derive_seed(master, {0x72756eULL /*"run"*/, static_cast<std::uint64_t>(key.strategy),
                              static_cast<std::uint64_t>(key.depth),
                              static_cast<std::uint64_t>(key.fold),
                              static_cast<std::uint64_t>(key.trial),
                              static_cast<std::uint64_t>(key.dropout_mills())});
}

struct RunResult {
  RunKey key;
  std::uint64_t seed = 0;
  std::string status = "ok";  // "ok" or "error"
  std::string error;
  double val_acc = 0, test_acc = 0;
  int stopped_epoch = 0, best_epoch = 0;
  double test_roc = 0, test_pr = 0;
  RatesReport test_rates;
  std::string history_path, checkpoint_path;
};

// ---------------------------------------------------------------------------
// Results store: append-only JSON lines keyed by the run tuple.
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const RunResult& r) {
  nlohmann::json j;
  j["id"] = r.key.id();
  j["strategy"] = to_string(r.key.strategy);
  j["depth"] = r.key.depth;
  j["fold"] = r.key.fold;
  j["trial"] = r.key.trial;
  j["dropout"] = r.key.dropout_p;
  j["seed"] = r.seed;
  j["status"] = r.status;
  if (!r.error.empty()) j["error"] = r.error;
  j["val_acc"] = r.val_acc;
  j["test_acc"] = r.test_acc;
  j["stopped_epoch"] = r.stopped_epoch;
  j["best_epoch"] = r.best_epoch;
  j["test_roc"] = r.test_roc;
  j["test_pr"] = r.test_pr;
  j["confusion"] = {{"tp", r.test_rates.cm.tp},
                    {"tn", r.test_rates.cm.tn},
                    {"fp", r.test_rates.cm.fp},
                    {"fn", r.test_rates.cm.fn}};
  for (int c = 0; c < 2; ++c) {
    const char* name = c == 0 ? "cn" : "ad";
    j[name] = {{"precision", r.test_rates.per_class[c].precision},
               {"recall", r.test_rates.per_class[c].recall},
               {"f1", r.test_rates.per_class[c].f1}};
  }
  j["history"] = r.history_path;
  j["checkpoint"] = r.checkpoint_path;
  return j;
}

inline RunResult run_result_from_json(const nlohmann::json& j) {
  RunResult r;
  r.key.strategy = strategy_from_string(j.at("strategy").get<std::string>());
  r.key.depth = j.at("depth").get<int>();
  r.key.fold = j.at("fold").get<int>();
  r.key.trial = j.at("trial").get<int>();
  r.key.dropout_p = j.at("dropout").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.status = j.at("status").get<std::string>();
  r.error = j.value("error", "");
  r.val_acc = j.at("val_acc").get<double>();
  r.test_acc = j.at("test_acc").get<double>();
  r.stopped_epoch = j.at("stopped_epoch").get<int>();
  r.best_epoch = j.at("best_epoch").get<int>();
  r.test_roc = j.value("test_roc", 0.0);
  r.test_pr = j.value("test_pr", 0.0);
  if (j.contains("confusion")) {
    const auto& c = j["confusion"];
    r.test_rates.cm = {c.at("tp").get<std::int64_t>(), c.at("tn").get<std::int64_t>(),
                       c.at("fp").get<std::int64_t>(), c.at("fn").get<std::int64_t>()};
  }
  for (int c = 0; c < 2; ++c) {
    const char* name = c == 0 ? "cn" : "ad";
    if (j.contains(name)) {
      r.test_rates.per_class[c].precision = j[name].value("precision", 0.0);
      r.test_rates.per_class[c].recall = j[name].value("recall", 0.0);
      r.test_rates.per_class[c].f1 = j[name].value("f1", 0.0);
    }
  }
  r.test_rates.accuracy = r.test_acc;
  r.history_path = j.value("history", "");
  r.checkpoint_path = j.value("checkpoint", "");
  return r;
}

class ResultsStore {
 public:
  explicit ResultsStore(std::string path) : path_(std::move(path)) {}

  /// Latest record per key wins (failed runs may be retried and re-appended).
  std::vector<RunResult> load() const {
    std::vector<RunResult> out;
    std::ifstream is(path_);
    if (!is) return out;
    std::map<std::string, std::size_t> by_id;
    std::string line;
    std::size_t row = 0;
    while (std::getline(is, line)) {
      ++row;
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw ParseError("results store " + path_ + " row " + std::to_string(row) + ": " +
                         e.what());
      }
      RunResult r = run_result_from_json(j);
      const std::string id = r.key.id();
      auto it = by_id.find(id);
      if (it == by_id.end()) {
        by_id[id] = out.size();
        out.push_back(std::move(r));
      } else {
        out[it->second] = std::move(r);
      }
    }
    return out;
  }

  void append(const RunResult& r) {
    std::lock_guard<std::mutex> lock(mu_);
    std::ofstream os(path_, std::ios::binary | std::ios::app);
    if (!os) throw IoError("cannot append to results store: " + path_);
    os << to_json(r).dump() << '\n';
    os.flush();
    if (!os) throw IoError("results store write failed: " + path_);
  }

  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::mutex mu_;
};

// ---------------------------------------------------------------------------
// Single run
// ---------------------------------------------------------------------------

struct GridData {
  std::vector<LabeledVolume<float>> samples;  // raw volumes, ids match the fold plan
  FoldPlan folds;
};

namespace detail {

inline std::unordered_map<std::string, std::size_t> index_by_id(
    const std::vector<LabeledVolume<float>>& samples) {
  std::unordered_map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!idx.emplace(samples[i].id, i).second)
      throw DuplicateId("duplicate sample id: " + samples[i].id);
  }
  return idx;
}

inline std::vector<LabeledVolume<float>> gather(
    const std::vector<LabeledVolume<float>>& samples,
    const std::unordered_map<std::string, std::size_t>& idx, const std::vector<std::string>& ids) {
  std::vector<LabeledVolume<float>> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = idx.find(id);
    if (it == idx.end()) throw MissingFile("fold plan references unknown sample id: " + id);
    out.push_back(samples[it->second]);
  }
  return out;
}

inline void normalize_all(std::vector<LabeledVolume<float>>& set) {
  for (auto& s : set) s.vol = normalize_intensity(s.vol);
}

}  // namespace detail

/// Train-set leakage guard: no training sample id (raw or augmentation
/// source) may appear in the validation or test id sets.
inline void check_leakage(const AugmentedSet<float>& train_set, const std::vector<std::string>& val,
                          const std::vector<std::string>& test) {
  std::unordered_set<std::string> held(val.begin(), val.end());
  held.insert(test.begin(), test.end());
  for (const auto& rec : train_set.log)
    if (held.count(rec.source_id))
      throw InvalidSpec("leakage: training sample " + rec.source_id + " is in a held-out set");
  for (const auto& s : train_set.samples) {
    const std::string base = s.id.substr(0, s.id.find('/'));
    if (held.count(base))
      throw InvalidSpec("leakage: training sample " + base + " is in a held-out set");
  }
}

/// Execute one (strategy, depth, fold, trial, dropout) run: split, augment,
/// normalize, train, evaluate. When `out_dir` is nonempty the history,
/// checkpoint and augmentation log are written under out_dir/<run id>/.
inline RunResult run_one(const ExperimentPlan& plan, const GridData& data, const RunKey& key,
                         const std::string& out_dir = "") {
  RunResult result;
  result.key = key;
  result.seed = run_seed(plan.master_seed, key);

  const auto idx = detail::index_by_id(data.samples);
  const SplitIds split = materialize_split(data.folds, key.fold);
  auto raw_train = detail::gather(data.samples, idx, split.train);
  auto val = detail::gather(data.samples, idx, split.val);
  auto test = detail::gather(data.samples, idx, split.test);
  if (raw_train.empty() || val.empty() || test.empty())
    throw EmptySplit("run " + key.id() + ": empty split");

  SeededRng aug_rng(derive_seed(result.seed, {1}));
  AugmentedSet<float> train_set = augment_set(raw_train, key.strategy, aug_rng, plan.bounds);
  check_leakage(train_set, split.val, split.test);
  detail::normalize_all(train_set.samples);
  detail::normalize_all(val);
  detail::normalize_all(test);

  const auto& v0 = data.samples.front().vol;
  ArchitectureSpec arch = make_arch_spec(key.depth, key.dropout_p, v0.nx, v0.ny, v0.nz);
  SeededRng model_rng(derive_seed(result.seed, {2}));
  Model<float> model = build_model<float>(arch, model_rng);

  TrainConfig cfg = plan.train;
  cfg.seed = derive_seed(result.seed, {3});
  FitResult fitres = fit(model, train_set.samples, val, cfg);
  result.stopped_epoch = fitres.stopped_epoch;
  result.best_epoch = fitres.best_epoch;

  EvalResult<float> val_eval = evaluate(model, val);
  EvalResult<float> test_eval = evaluate(model, test);
  result.val_acc = val_eval.accuracy;
  result.test_acc = test_eval.accuracy;

  std::vector<int> test_labels;
  for (const auto& s : test) test_labels.push_back(s.label);
  result.test_rates = confusion_and_rates(test_labels, test_eval.predictions);
  try {
    result.test_roc = roc_auc(test_labels, test_eval.prob_positive);
    result.test_pr = pr_auc(test_labels, test_eval.prob_positive);
  } catch (const SingleClass&) {
    result.test_roc = 0.5;  // degenerate single-class test split
    result.test_pr = 0.0;
  }

  if (!out_dir.empty()) {
    namespace fs = std::filesystem;
    const fs::path run_dir = fs::path(out_dir) / key.id();
    fs::create_directories(run_dir);
    result.history_path = (run_dir / "history.tsv").string();
    write_history(result.history_path, fitres.history);
    result.checkpoint_path = (run_dir / "model.ckpt").string();
    save_checkpoint(result.checkpoint_path, model);
    write_augment_log((run_dir / "augment_log.tsv").string(), train_set.log);
    std::ofstream seeds(run_dir / "seeds.txt", std::ios::binary);
    seeds << "run_seed\t" << result.seed << "\naugment_seed\t" << derive_seed(result.seed, {1})
          << "\nmodel_seed\t" << derive_seed(result.seed, {2}) << "\ntrain_seed\t"
          << derive_seed(result.seed, {3}) << "\n";
  }
  return result;
}

// ---------------------------------------------------------------------------
// Grid runner with resume and a bounded worker pool
// ---------------------------------------------------------------------------

inline std::vector<RunKey> grid_keys(const ExperimentPlan& plan) {
  std::vector<RunKey> keys;
  for (Strategy s : plan.strategies)
    for (int d : plan.depths)
      for (int f = 0; f < plan.k; ++f)
        for (int t = 0; t < plan.trials; ++t)
          keys.push_back({s, d, f, t, plan.dropout_p});
  return keys;
}

/// Runs every key not already completed in the store. Failed runs are
/// recorded with status "error" and do not abort siblings. Returns all
/// results for the plan (existing + new), one per key.
inline std::vector<RunResult> run_grid(const ExperimentPlan& plan, const GridData& data,
                                       ResultsStore& store, const std::string& out_dir = "",
                                       int jobs = 1,
                                       const std::vector<RunKey>* keys_override = nullptr) {
  plan.validate();
  const std::vector<RunKey> keys = keys_override ? *keys_override : grid_keys(plan);

  std::unordered_map<std::string, RunResult> done;
  for (auto& r : store.load())
    if (r.status == "ok") done.emplace(r.key.id(), std::move(r));

  std::vector<RunKey> pending;
  for (const auto& k : keys)
    if (!done.count(k.id())) pending.push_back(k);
  log_info("grid: %zu runs total, %zu already complete, %zu to run", keys.size(),
           keys.size() - pending.size(), pending.size());

  std::mutex done_mu;
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= pending.size()) return;
      const RunKey& key = pending[i];
      RunResult r;
      try {
        r = run_one(plan, data, key, out_dir);
      } catch (const std::exception& e) {
        r = RunResult{};
        r.key = key;
        r.seed = run_seed(plan.master_seed, key);
        r.status = "error";
        r.error = e.what();
      }
      store.append(r);
      log_info("grid: %s -> %s (val %.3f, test %.3f, %d epochs)", key.id().c_str(),
               r.status.c_str(), r.val_acc, r.test_acc, r.stopped_epoch);
      std::lock_guard<std::mutex> lock(done_mu);
      done[key.id()] = std::move(r);
    }
  };
  if (jobs <= 1 || pending.size() <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    const int n = std::min<int>(jobs, static_cast<int>(pending.size()));
    threads.reserve(n);
    for (int i = 0; i < n; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  std::vector<RunResult> out;
  out.reserve(keys.size());
  for (const auto& k : keys) {
    auto it = done.find(k.id());
    if (it != done.end()) out.push_back(it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Summaries
// ---------------------------------------------------------------------------

struct GridCell {
  Strategy strategy = Strategy::A;
  int depth = 4;
  MeanStd val, test;
  double mean_epochs = 0;
  std::vector<std::vector<double>> val_by_fold;  // fold -> values over trials
  std::size_t n_ok = 0, n_failed = 0;
};

struct GridSummary {
  std::vector<GridCell> cells;  // ordered by (strategy, depth)
  Strategy best_strategy = Strategy::A;
  int best_depth = 4;
};

/// Mean +- sample std per (strategy, depth) over folds x trials; best cell by
/// highest mean validation accuracy, ties broken by lower std then lower
/// depth. Order-insensitive in the input.
inline GridSummary summarize(const std::vector<RunResult>& results, int k) {
  if (results.empty()) throw EmptyStore("summarize: no results");
  std::map<std::pair<int, int>, GridCell> cells;  // (strategy ordinal, depth)
  for (const auto& r : results) {
    auto& cell = cells[{static_cast<int>(r.key.strategy), r.key.depth}];
    cell.strategy = r.key.strategy;
    cell.depth = r.key.depth;
    if (cell.val_by_fold.empty()) cell.val_by_fold.resize(k);
    if (r.status != "ok") {
      ++cell.n_failed;
      continue;
    }
    ++cell.n_ok;
    if (r.key.fold >= 0 && r.key.fold < k) cell.val_by_fold[r.key.fold].push_back(r.val_acc);
  }
  GridSummary summary;
  for (auto& [id, cell] : cells) {
    std::vector<double> vals, tests, epochs;
    for (const auto& r : results) {
      if (r.status != "ok" || r.key.strategy != cell.strategy || r.key.depth != cell.depth)
        continue;
      vals.push_back(r.val_acc);
      tests.push_back(r.test_acc);
      epochs.push_back(static_cast<double>(r.stopped_epoch));
    }
    if (!vals.empty()) {
      cell.val = aggregate(vals);
      cell.test = aggregate(tests);
      cell.mean_epochs = aggregate(epochs).mean;
    }
    summary.cells.push_back(std::move(cell));
  }
  const GridCell* best = nullptr;
  for (const auto& cell : summary.cells) {
    if (cell.n_ok == 0) continue;
    if (!best || cell.val.mean > best->val.mean ||
        (cell.val.mean == best->val.mean &&
         (cell.val.std < best->val.std ||
          (cell.val.std == best->val.std && cell.depth < best->depth))))
      best = &cell;
  }
  if (!best) throw EmptyStore("summarize: no successful runs");
  summary.best_strategy = best->strategy;
  summary.best_depth = best->depth;
  return summary;
}

// ---------------------------------------------------------------------------
// Dropout ablation
// ---------------------------------------------------------------------------

struct AblationRow {
  double dropout = 0;
  MeanStd val, test;
  double mean_epochs = 0;
};

struct AblationTable {
  Strategy strategy = Strategy::A;
  int depth = 4;
  std::vector<AblationRow> rows;
};

/// Grid restricted to one (strategy, depth) across the dropout grid. The
/// emitted table matches the appendix layout: Dropout / Validation accuracy /
/// Testing accuracy / N. epochs.
inline AblationTable run_dropout_ablation(const ExperimentPlan& plan, const GridData& data,
                                          Strategy strategy, int depth, ResultsStore& store,
                                          const std::string& out_dir = "", int jobs = 1) {
  plan.validate();
  if (plan.dropout_grid.empty()) throw InvalidSpec("ablation: empty dropout grid");
  AblationTable table;
  table.strategy = strategy;
  table.depth = depth;
  for (double p : plan.dropout_grid) {
    ExperimentPlan sub = plan;
    sub.strategies = {strategy};
    sub.depths = {depth};
    sub.dropout_p = p;
    auto results = run_grid(sub, data, store, out_dir, jobs);
    std::vector<double> vals, tests, epochs;
    for (const auto& r : results) {
      if (r.status != "ok") continue;
      vals.push_back(r.val_acc);
      tests.push_back(r.test_acc);
      epochs.push_back(static_cast<double>(r.stopped_epoch));
    }
    AblationRow row;
    row.dropout = p;
    if (!vals.empty()) {
      row.val = aggregate(vals);
      row.test = aggregate(tests);
      row.mean_epochs = aggregate(epochs).mean;
    }
    table.rows.push_back(row);
  }
  return table;
}

inline void write_ablation_table(std::ostream& os, const AblationTable& t) {
  os << "Dropout\tValidation accuracy\tTesting accuracy\tN. epochs\n";
  char buf[160];
  for (const auto& r : t.rows) {
    std::snprintf(buf, sizeof buf, "%.2f\t%.2f ± %.2f\t%.2f ± %.2f\t%.0f\n", r.dropout,
                  100.0 * r.val.mean, 100.0 * r.val.std, 100.0 * r.test.mean,
                  100.0 * r.test.std, r.mean_epochs);
    os << buf;
  }
}

// ---------------------------------------------------------------------------
// External (domain-shift) evaluation: pure inference through the same
// preprocessing pipeline.
// ---------------------------------------------------------------------------

struct ExternalEval {
  RatesReport rates;
  MetricReport report;
  double roc = 0, pr = 0;
  std::vector<std::array<double, 2>> roc_curve;
  std::size_t n_samples = 0;
};

inline ExternalEval evaluate_external(const std::string& checkpoint_path,
                                      std::vector<LabeledVolume<float>> external) {
  if (external.empty()) throw EmptySplit("evaluate_external: empty external set");
  Checkpoint<float> ck = load_checkpoint<float>(checkpoint_path);
  const auto& spec = ck.model.spec;
  for (auto& s : external) {
    if (s.vol.nx != spec.input_nx || s.vol.ny != spec.input_ny || s.vol.nz != spec.input_nz)
      s.vol = resize(s.vol, spec.input_nx, spec.input_ny, spec.input_nz);
    s.vol = normalize_intensity(s.vol);
  }
  EvalResult<float> eval = evaluate(ck.model, external);
  std::vector<int> labels;
  for (const auto& s : external) labels.push_back(s.label);
  ExternalEval out;
  out.n_samples = external.size();
  out.rates = confusion_and_rates(labels, eval.predictions);
  out.roc = roc_auc(labels, eval.prob_positive);
  out.pr = pr_auc(labels, eval.prob_positive);
  out.roc_curve = roc_points(labels, eval.prob_positive);
  out.report = single_report(out.rates, out.roc, out.pr);
  return out;
}

}  // namespace voxkit
