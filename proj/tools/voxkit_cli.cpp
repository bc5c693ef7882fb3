// voxkit command-line driver.
//
// Subcommands cover the full experiment lifecycle: synthesize or preprocess
// data, build fold plans, run single training jobs or whole grids, ablate
// dropout, evaluate a checkpoint on an external cohort, and render reports
// from a results store.
//
// Exit codes: 0 success, 1 usage error, 2 configuration error, 3 missing or
// unwritable files, 4 data error (manifests, stores, folds), 5 numeric or
// model error.
#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "voxkit/voxkit.hpp"

namespace {

using voxkit::json;
namespace fs = std::filesystem;

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir = "out";
  int jobs = 1;
  std::optional<std::uint64_t> seed;
  bool reference_mode = false;
};

json resolve_config(const CommonOpts& c) {
  json cfg = json::object();
  if (!c.config_path.empty()) cfg = voxkit::load_config_file(c.config_path);
  for (const auto& ov : c.overrides) voxkit::apply_override(cfg, ov);
  if (!cfg.is_object()) throw voxkit::ConfigError("config root must be an object");
  for (const auto& [key, value] : cfg.items()) {
    (void)value;
    if (key != "synth" && key != "train" && key != "augment" && key != "grid" && key != "tsne")
      throw voxkit::ConfigError("unknown config section '" + key + "'");
  }
  return cfg;
}

int effective_jobs(const CommonOpts& c) { return c.reference_mode ? 1 : std::max(1, c.jobs); }

std::string resolve_relative(const std::string& manifest_path, const std::string& p) {
  fs::path vp(p);
  if (vp.is_absolute()) return p;
  fs::path base = fs::path(manifest_path).parent_path();
  if (base.empty()) return p;
  return (base / vp).string();
}

// Load every volume referenced by a manifest; relative paths resolve against
// the manifest's own directory.
std::vector<voxkit::LabeledVolume<float>> load_samples(const std::string& manifest_path) {
  auto records = voxkit::load_manifest(manifest_path);
  std::vector<voxkit::LabeledVolume<float>> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    voxkit::LabeledVolume<float> s;
    s.id = r.id;
    s.label = r.label;
    s.vol = voxkit::load_volume(resolve_relative(manifest_path, r.volume_path));
    out.push_back(std::move(s));
  }
  return out;
}

// Fully resolved settings (defaults + file + overrides) for the run directory.
void write_config_snapshot(const json& cfg, const CommonOpts& c,
                           const voxkit::ExperimentPlan& plan, const std::string& dir) {
  voxkit::SyntheticSpec synth = voxkit::synth_from_json(cfg.value("synth", json()));
  json snap = voxkit::config_snapshot(synth, plan);
  snap["overrides"] = c.overrides;
  snap["jobs"] = effective_jobs(c);
  snap["reference_mode"] = c.reference_mode;
  voxkit::write_json_file(dir + "/config_snapshot.json", snap);
}

voxkit::ExperimentPlan plan_from_config(const json& cfg, const CommonOpts& c) {
  voxkit::ExperimentPlan plan = voxkit::plan_from_json(cfg);
  if (c.seed) plan.master_seed = *c.seed;
  plan.validate();
  return plan;
}

voxkit::GridData load_grid_data(const std::string& manifest, const std::string& folds_path) {
  voxkit::GridData data;
  data.samples = load_samples(manifest);
  data.folds = voxkit::load_fold_plan(folds_path);
  return data;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw voxkit::IoError("cannot write: " + path);
  return os;
}

// ---- subcommand bodies ----------------------------------------------------

int cmd_synth(const CommonOpts& c) {
  json cfg = resolve_config(c);
  voxkit::SyntheticSpec spec = voxkit::synth_from_json(cfg.value("synth", json()));
  if (c.seed) spec.seed = *c.seed;
  voxkit::validate_synthetic(spec);
  auto samples = voxkit::generate_synthetic<float>(spec);
  fs::create_directories(c.out_dir);
  std::vector<voxkit::SampleRecord> records;
  for (const auto& s : samples) {
    std::string rel = s.id + ".vox";
    voxkit::VolumeMeta meta;
    meta.source_id = s.id;
    meta.steps = {"synthetic"};
    voxkit::save_volume(c.out_dir + "/" + rel, s.vol, &meta);
    records.push_back({s.id, rel, s.label, ""});
  }
  voxkit::save_manifest(c.out_dir + "/manifest.tsv", records);
  voxkit::write_json_file(c.out_dir + "/config_snapshot.json",
                          json{{"synth", voxkit::synth_to_json(spec)}});
  double oracle = voxkit::synthetic_oracle_accuracy(samples, spec);
  std::printf("synth: wrote %zu volumes (%d class0 + %d class1) to %s\n", samples.size(),
              spec.n_class0, spec.n_class1, c.out_dir.c_str());
  std::printf("synth: threshold-oracle accuracy %.4f\n", oracle);
  return 0;
}

int cmd_preprocess(const CommonOpts& c, const std::string& manifest, int nx, int ny, int nz) {
  auto records = voxkit::load_manifest(manifest);
  fs::create_directories(c.out_dir);
  std::vector<voxkit::SampleRecord> out_records;
  for (const auto& r : records) {
    voxkit::VolumeF v = voxkit::load_volume(resolve_relative(manifest, r.volume_path));
    if (v.nx != nx || v.ny != ny || v.nz != nz) v = voxkit::resize(v, nx, ny, nz);
    v = voxkit::normalize_intensity(v);
    std::string rel = r.id + ".vox";
    voxkit::VolumeMeta meta;
    meta.source_id = r.id;
    meta.steps = {"resize", "normalize"};
    voxkit::save_volume(c.out_dir + "/" + rel, v, &meta);
    out_records.push_back({r.id, rel, r.label, r.cohort_tag});
  }
  voxkit::save_manifest(c.out_dir + "/manifest.tsv", out_records);
  std::printf("preprocess: %zu volumes -> %dx%dx%d, normalized, written to %s\n",
              out_records.size(), nx, ny, nz, c.out_dir.c_str());
  return 0;
}

int cmd_split(const CommonOpts& c, const std::string& manifest, int k) {
  json cfg = resolve_config(c);
  voxkit::ExperimentPlan plan = plan_from_config(cfg, c);
  if (k <= 0) k = plan.k;
  auto records = voxkit::load_manifest(manifest);
  voxkit::FoldPlan folds = voxkit::stratified_kfold(records, k, plan.master_seed);
  fs::create_directories(c.out_dir);
  std::string path = c.out_dir + "/folds.tsv";
  voxkit::save_fold_plan(path, folds);
  std::vector<int> cn(static_cast<std::size_t>(k), 0), ad(static_cast<std::size_t>(k), 0);
  for (std::size_t i = 0; i < records.size(); ++i) {
    int f = folds.fold_of[i];
    (records[i].label == 0 ? cn : ad)[static_cast<std::size_t>(f)]++;
  }
  std::printf("split: %d folds over %zu samples (seed %llu) -> %s\n", k, records.size(),
              static_cast<unsigned long long>(plan.master_seed), path.c_str());
  for (int f = 0; f < k; ++f)
    std::printf("  fold %d: %d class0 / %d class1\n", f, cn[static_cast<std::size_t>(f)],
                ad[static_cast<std::size_t>(f)]);
  return 0;
}

int cmd_train(const CommonOpts& c, const std::string& manifest, const std::string& folds_path,
              const std::string& strategy_name, int depth, int fold, int trial, double dropout) {
  json cfg = resolve_config(c);
  voxkit::ExperimentPlan plan = plan_from_config(cfg, c);
  voxkit::GridData data = load_grid_data(manifest, folds_path);
  voxkit::RunKey key;
  key.strategy = voxkit::strategy_from_string(strategy_name);
  key.depth = depth;
  key.fold = fold;
  key.trial = trial;
  key.dropout_p = dropout;
  fs::create_directories(c.out_dir);
  write_config_snapshot(cfg, c, plan, c.out_dir);
  voxkit::RunResult res = voxkit::run_one(plan, data, key, c.out_dir);
  voxkit::write_json_file(c.out_dir + "/" + key.id() + "/metrics.json", voxkit::to_json(res));
  std::printf("train: %s val_acc %.4f test_acc %.4f roc_auc %.4f epochs %d (best %d)\n",
              key.id().c_str(), res.val_acc, res.test_acc, res.test_roc, res.stopped_epoch,
              res.best_epoch);
  return 0;
}

void emit_report(const voxkit::ExperimentPlan& plan,
                 const std::vector<voxkit::RunResult>& results, const std::string& out_dir) {
  voxkit::GridSummary summary = voxkit::summarize(results, plan.k);
  {
    auto os = open_out(out_dir + "/grid_table.tsv");
    voxkit::write_grid_table(os, summary);
  }
  voxkit::write_fold_small_multiples(out_dir + "/fold_small_multiples.svg", summary, plan.k);
  // Training curves for the best run whose history file is still on disk.
  const voxkit::RunResult* best = nullptr;
  for (const auto& r : results) {
    if (r.status != "ok" || r.history_path.empty()) continue;
    if (!fs::exists(r.history_path)) continue;
    if (!best || r.val_acc > best->val_acc) best = &r;
  }
  if (best) {
    voxkit::TrainHistory hist = voxkit::load_history(best->history_path);
    voxkit::write_training_curves(out_dir + "/training_curves.svg", hist);
  }
  std::printf("report: best cell %s with %d conv layers\n", to_string(summary.best_strategy),
              summary.best_depth);
  std::printf("report: wrote grid_table.tsv, fold_small_multiples.svg%s in %s\n",
              best ? ", training_curves.svg" : "", out_dir.c_str());
}

int cmd_grid(const CommonOpts& c, const std::string& manifest, const std::string& folds_path) {
  json cfg = resolve_config(c);
  voxkit::ExperimentPlan plan = plan_from_config(cfg, c);
  voxkit::GridData data = load_grid_data(manifest, folds_path);
  fs::create_directories(c.out_dir);
  write_config_snapshot(cfg, c, plan, c.out_dir);
  voxkit::ResultsStore store(c.out_dir + "/results.jsonl");
  auto results = voxkit::run_grid(plan, data, store, c.out_dir, effective_jobs(c));
  int failed = 0;
  for (const auto& r : results)
    if (r.status != "ok") ++failed;
  if (failed > 0)
    std::printf("grid: %d of %zu runs failed; see results.jsonl\n", failed, results.size());
  emit_report(plan, results, c.out_dir);
  return failed == 0 ? 0 : 5;
}

int cmd_ablate(const CommonOpts& c, const std::string& manifest, const std::string& folds_path,
               const std::string& strategy_name, int depth) {
  json cfg = resolve_config(c);
  voxkit::ExperimentPlan plan = plan_from_config(cfg, c);
  voxkit::GridData data = load_grid_data(manifest, folds_path);
  fs::create_directories(c.out_dir);
  write_config_snapshot(cfg, c, plan, c.out_dir);
  voxkit::ResultsStore store(c.out_dir + "/results.jsonl");
  voxkit::Strategy strat = voxkit::strategy_from_string(strategy_name);
  voxkit::AblationTable table =
      voxkit::run_dropout_ablation(plan, data, strat, depth, store, c.out_dir, effective_jobs(c));
  {
    auto os = open_out(c.out_dir + "/ablation_table.tsv");
    voxkit::write_ablation_table(os, table);
  }
  voxkit::write_ablation_table(std::cout, table);
  std::printf("ablate: wrote %s/ablation_table.tsv\n", c.out_dir.c_str());
  return 0;
}

int cmd_eval_external(const CommonOpts& c, const std::string& checkpoint,
                      const std::string& manifest) {
  auto external = load_samples(manifest);
  voxkit::ExternalEval ev = voxkit::evaluate_external(checkpoint, std::move(external));
  fs::create_directories(c.out_dir);
  {
    auto os = open_out(c.out_dir + "/external_metrics.tsv");
    voxkit::write_metric_report(os, ev.report);
  }
  voxkit::write_roc_plot(c.out_dir + "/external_roc.svg", ev.roc_curve, ev.roc);
  std::printf("eval-external: %zu samples, accuracy %.4f, ROC AUC %.4f, PR AUC %.4f\n",
              ev.n_samples, ev.rates.accuracy, ev.roc, ev.pr);
  std::printf("eval-external: wrote external_metrics.tsv, external_roc.svg in %s\n",
              c.out_dir.c_str());
  return 0;
}

int cmd_report(const CommonOpts& c, const std::string& store_path) {
  json cfg = resolve_config(c);
  voxkit::ExperimentPlan plan = plan_from_config(cfg, c);
  voxkit::ResultsStore store(store_path);
  auto results = store.load();
  if (results.empty())
    throw voxkit::EmptyStore("results store '" + store_path + "' has no rows");
  fs::create_directories(c.out_dir);
  emit_report(plan, results, c.out_dir);
  return 0;
}

int code_for(const std::exception& e) {
  if (dynamic_cast<const voxkit::ConfigError*>(&e)) return 2;
  if (dynamic_cast<const voxkit::MissingFile*>(&e)) return 3;
  if (dynamic_cast<const voxkit::IoError*>(&e)) return 3;
  if (dynamic_cast<const voxkit::ParseError*>(&e)) return 4;
  if (dynamic_cast<const voxkit::DuplicateId*>(&e)) return 4;
  if (dynamic_cast<const voxkit::TooFewSamples*>(&e)) return 4;
  if (dynamic_cast<const voxkit::EmptySplit*>(&e)) return 4;
  if (dynamic_cast<const voxkit::EmptyStore*>(&e)) return 4;
  if (dynamic_cast<const voxkit::Error*>(&e)) return 5;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"voxkit: volumetric CNN experiment toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  CommonOpts c;
  app.add_option("--config", c.config_path, "JSON configuration file (// comments allowed)");
  app.add_option("--set", c.overrides, "Override a config key, e.g. --set train.max_epochs=5")
      ->take_all();
  app.add_option("--out", c.out_dir, "Output directory")->capture_default_str();
  app.add_option("--jobs", c.jobs, "Worker threads for grid/ablation runs")
      ->capture_default_str();
  std::uint64_t seed_val = 0;
  auto* seed_opt = app.add_option("--seed", seed_val, "Master seed override");
  app.add_flag("--reference-mode", c.reference_mode,
               "Single-threaded, bitwise-reproducible execution");

  std::string manifest, folds_path, strategy_name = "A", checkpoint, store_path;
  int depth = 4, fold = 0, trial = 0, k = 0;
  int nx = 96, ny = 96, nz = 73;
  double dropout = 0.0;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled dataset");
  auto* preprocess =
      app.add_subcommand("preprocess", "Resize and normalize volumes from a manifest");
  preprocess->add_option("--manifest", manifest, "Input manifest (id\\tpath\\tlabel)")
      ->required();
  preprocess->add_option("--nx", nx, "Target x dimension")->capture_default_str();
  preprocess->add_option("--ny", ny, "Target y dimension")->capture_default_str();
  preprocess->add_option("--nz", nz, "Target z dimension")->capture_default_str();
  auto* split = app.add_subcommand("split", "Build a stratified k-fold plan");
  split->add_option("--manifest", manifest, "Input manifest")->required();
  split->add_option("--k", k, "Number of folds (default: grid.k from config)");
  auto* train = app.add_subcommand("train", "Train and evaluate a single configuration");
  train->add_option("--manifest", manifest, "Input manifest")->required();
  train->add_option("--folds", folds_path, "Fold plan file from `split`")->required();
  train->add_option("--strategy", strategy_name, "Augmentation strategy A|B|C")
      ->capture_default_str();
  train->add_option("--depth", depth, "Total conv layers (4, 6, 8, 10 or 12)")
      ->capture_default_str();
  train->add_option("--fold", fold, "Test fold index")->capture_default_str();
  train->add_option("--trial", trial, "Trial (repetition) index")->capture_default_str();
  train->add_option("--dropout", dropout, "Dropout probability before the FC layer")
      ->capture_default_str();
  auto* grid = app.add_subcommand("grid", "Run the full strategy x depth x fold x trial grid");
  grid->add_option("--manifest", manifest, "Input manifest")->required();
  grid->add_option("--folds", folds_path, "Fold plan file from `split`")->required();
  auto* ablate = app.add_subcommand("ablate", "Dropout ablation at a fixed strategy and depth");
  ablate->add_option("--manifest", manifest, "Input manifest")->required();
  ablate->add_option("--folds", folds_path, "Fold plan file from `split`")->required();
  ablate->add_option("--strategy", strategy_name, "Augmentation strategy A|B|C")
      ->capture_default_str();
  ablate->add_option("--depth", depth, "Total conv layers")->capture_default_str();
  auto* evalx =
      app.add_subcommand("eval-external", "Evaluate a checkpoint on an external cohort");
  evalx->add_option("--checkpoint", checkpoint, "Model checkpoint file")->required();
  evalx->add_option("--manifest", manifest, "External cohort manifest")->required();
  auto* report = app.add_subcommand("report", "Render tables and plots from a results store");
  report->add_option("--store", store_path, "results.jsonl produced by `grid`")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  if (*seed_opt) c.seed = seed_val;

  try {
    if (*synth) return cmd_synth(c);
    if (*preprocess) return cmd_preprocess(c, manifest, nx, ny, nz);
    if (*split) return cmd_split(c, manifest, k);
    if (*train)
      return cmd_train(c, manifest, folds_path, strategy_name, depth, fold, trial, dropout);
    if (*grid) return cmd_grid(c, manifest, folds_path);
    if (*ablate) return cmd_ablate(c, manifest, folds_path, strategy_name, depth);
    if (*evalx) return cmd_eval_external(c, checkpoint, manifest);
    if (*report) return cmd_report(c, store_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return code_for(e);
  }
  return 1;
}
