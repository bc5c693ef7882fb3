#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "voxkit/experiment.hpp"

using namespace voxkit;

namespace {

// Small, fast grid fixture: 3-fold plan over tiny synthetic volumes with a
// one-epoch training budget.
struct DeskFixture {
  ExperimentPlan plan;
  GridData data;

  DeskFixture() {
    SyntheticSpec spec;
    spec.nx = 6;
    spec.ny = 6;
    spec.nz = 5;
    spec.n_class0 = 4;
    spec.n_class1 = 4;
    spec.seed = 5;
    data.samples = generate_synthetic<float>(spec);
    std::vector<SampleRecord> records;
    for (const auto& s : data.samples) records.push_back({s.id, "", s.label, ""});
    data.folds = stratified_kfold(records, 3, 17);

    plan.strategies = {Strategy::A};
    plan.depths = {4};
    plan.k = 3;
    plan.trials = 2;
    plan.master_seed = 99;
    plan.train.max_epochs = 1;
    plan.train.patience = 1;
    plan.train.batch_size = 8;
  }
};

std::size_t line_count(const std::string& path) {
  std::ifstream is(path);
  std::size_t n = 0;
  std::string line;
  while (std::getline(is, line)) ++n;
  return n;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream buf;
  buf << is.rdbuf();
  return buf.str();
}

RunResult ok_result(Strategy s, int depth, int fold, int trial, double val, double test,
                    int epochs = 3) {
  RunResult r;
  r.key = {s, depth, fold, trial, 0.0};
  r.status = "ok";
  r.val_acc = val;
  r.test_acc = test;
  r.stopped_epoch = epochs;
  return r;
}

}  // namespace

TEST_CASE("run keys render stable ids", "[experiment]") {
  REQUIRE(RunKey{Strategy::A, 4, 0, 0, 0.0}.id() == "A-d4-f0-t0-p0");
  REQUIRE(RunKey{Strategy::C, 12, 6, 9, 0.25}.id() == "C-d12-f6-t9-p250");
  REQUIRE(RunKey{Strategy::B, 8, 2, 3, 0.1}.id() == "B-d8-f2-t3-p100");
  REQUIRE(RunKey{Strategy::B, 8, 2, 3, 0.1}.dropout_mills() == 100);
  REQUIRE((RunKey{Strategy::A, 4, 0, 0, 0.1} == RunKey{Strategy::A, 4, 0, 0, 0.1000001}));
}

TEST_CASE("run seeds are distinct across the whole grid", "[experiment]") {
  std::set<std::uint64_t> seeds;
  std::size_t total = 0;
  for (int s = 0; s < 3; ++s)
    for (int depth : {4, 6, 8, 10, 12})
      for (int fold = 0; fold < 7; ++fold)
        for (int trial = 0; trial < 10; ++trial)
          for (double p : {0.0, 0.1, 0.25, 0.5}) {
            ++total;
            seeds.insert(run_seed(1234, {static_cast<Strategy>(s), depth, fold, trial, p}));
          }
  REQUIRE(total == 3u * 5u * 7u * 10u * 4u);
  REQUIRE(seeds.size() == total);  // no collisions anywhere in the tuple space
  const RunKey k{Strategy::A, 4, 0, 0, 0.0};
  REQUIRE(run_seed(1, k) != run_seed(2, k));
}

TEST_CASE("run results survive the json round-trip", "[experiment]") {
  RunResult r;
  r.key = {Strategy::B, 10, 3, 7, 0.25};
  r.seed = 0xabcdef0123456789ULL;
  r.status = "ok";
  r.val_acc = 0.875;
  r.test_acc = 0.8125;
  r.stopped_epoch = 37;
  r.best_epoch = 17;
  r.test_roc = 0.91;
  r.test_pr = 0.88;
  r.test_rates = confusion_and_rates({1, 1, 0, 0}, {1, 0, 0, 1});
  r.test_rates.accuracy = r.test_acc;
  r.history_path = "out/B-d10-f3-t7-p250/history.tsv";
  r.checkpoint_path = "out/B-d10-f3-t7-p250/model.ckpt";

  const auto j = to_json(r);
  REQUIRE(j.at("id") == "B-d10-f3-t7-p250");
  const auto back = run_result_from_json(j);
  REQUIRE(back.key == r.key);
  REQUIRE(back.seed == r.seed);
  REQUIRE(back.status == "ok");
  REQUIRE(back.val_acc == r.val_acc);
  REQUIRE(back.test_acc == r.test_acc);
  REQUIRE(back.stopped_epoch == 37);
  REQUIRE(back.best_epoch == 17);
  REQUIRE(back.test_roc == 0.91);
  REQUIRE(back.test_pr == 0.88);
  REQUIRE(back.test_rates.cm.tp == r.test_rates.cm.tp);
  REQUIRE(back.test_rates.cm.fp == r.test_rates.cm.fp);
  REQUIRE(back.test_rates.per_class[1].precision == r.test_rates.per_class[1].precision);
  REQUIRE(back.history_path == r.history_path);
  REQUIRE(back.checkpoint_path == r.checkpoint_path);

  RunResult failed;
  failed.key = {Strategy::A, 4, 0, 0, 0.0};
  failed.status = "error";
  failed.error = "synthetic failure";
  const auto back2 = run_result_from_json(to_json(failed));
  REQUIRE(back2.status == "error");
  REQUIRE(back2.error == "synthetic failure");
}

TEST_CASE("results store keeps the newest record per key", "[experiment]") {
  testutil::TempDir dir;
  ResultsStore store(dir.file("results.jsonl"));
  REQUIRE(store.load().empty());  // a missing store is just empty

  store.append(ok_result(Strategy::A, 4, 0, 0, 0.5, 0.5));
  store.append(ok_result(Strategy::A, 4, 1, 0, 0.6, 0.6));
  store.append(ok_result(Strategy::A, 4, 0, 0, 0.9, 0.8));  // supersedes the first

  const auto rows = store.load();
  REQUIRE(rows.size() == 2u);
  REQUIRE(rows[0].key.fold == 0);
  REQUIRE(rows[0].val_acc == 0.9);  // last write wins, original position kept
  REQUIRE(rows[1].key.fold == 1);
  REQUIRE(line_count(store.path()) == 3u);  // the file itself is append-only
}

TEST_CASE("a corrupt store row is reported with its line number", "[experiment]") {
  testutil::TempDir dir;
  const auto path = dir.file("broken.jsonl");
  ResultsStore store(path);
  store.append(ok_result(Strategy::A, 4, 0, 0, 0.5, 0.5));
  std::ofstream(path, std::ios::app) << "{not json\n";
  REQUIRE_THROWS_WITH(store.load(), Catch::Matchers::ContainsSubstring("row 2"));
}

TEST_CASE("leakage checks catch held-out ids in the training set", "[experiment]") {
  AugmentedSet<float> train_set;
  train_set.samples.push_back({Volume3D<float>(2, 2, 2), 0, "v1"});
  train_set.samples.push_back({Volume3D<float>(2, 2, 2), 0, "v1/aug0-zoom"});
  AugmentRecord rec;
  rec.source_id = "v1";
  rec.out_id = "v1/aug0-zoom";
  train_set.log.push_back(rec);

  REQUIRE_NOTHROW(check_leakage(train_set, {"v2"}, {"v3"}));
  REQUIRE_THROWS_AS(check_leakage(train_set, {"v1"}, {"v3"}), InvalidSpec);
  REQUIRE_THROWS_AS(check_leakage(train_set, {"v2"}, {"v1"}), InvalidSpec);
}

TEST_CASE("run_one is deterministic and writes its artifacts", "[experiment]") {
  DeskFixture fx;
  testutil::TempDir dir;
  const RunKey key{Strategy::A, 4, 0, 0, 0.0};

  const auto r1 = run_one(fx.plan, fx.data, key, dir.path());
  REQUIRE(r1.status == "ok");
  REQUIRE(r1.seed == run_seed(fx.plan.master_seed, key));
  REQUIRE(r1.stopped_epoch == 1);
  REQUIRE(r1.best_epoch == 1);
  REQUIRE(r1.val_acc >= 0.0);
  REQUIRE(r1.val_acc <= 1.0);
  REQUIRE(r1.test_rates.cm.total() > 0);

  namespace fs = std::filesystem;
  const fs::path run_dir = fs::path(dir.path()) / key.id();
  REQUIRE(fs::exists(run_dir / "history.tsv"));
  REQUIRE(fs::exists(run_dir / "model.ckpt"));
  REQUIRE(fs::exists(run_dir / "augment_log.tsv"));
  REQUIRE(fs::exists(run_dir / "seeds.txt"));
  const auto history_bytes = slurp((run_dir / "history.tsv").string());
  REQUIRE(!history_bytes.empty());

  // a second identical invocation reproduces everything, including files
  const auto r2 = run_one(fx.plan, fx.data, key, dir.path());
  REQUIRE(r2.val_acc == r1.val_acc);
  REQUIRE(r2.test_acc == r1.test_acc);
  REQUIRE(r2.test_roc == r1.test_roc);
  REQUIRE(slurp((run_dir / "history.tsv").string()) == history_bytes);

  // the seeds file spells out the derived sub-seeds
  const auto seeds = slurp((run_dir / "seeds.txt").string());
  REQUIRE(seeds.find("run_seed\t" + std::to_string(r1.seed)) != std::string::npos);
  REQUIRE(seeds.find("augment_seed") != std::string::npos);
}

TEST_CASE("run_grid resumes without redoing completed work", "[experiment]") {
  DeskFixture fx;
  testutil::TempDir dir;
  ResultsStore store(dir.file("results.jsonl"));

  // pre-seed one key with a sentinel value; a resumed grid must keep it
  // rather than recompute it
  auto sentinel = ok_result(Strategy::A, 4, 2, 1, 0.123456, 0.654321);
  store.append(sentinel);

  const auto results = run_grid(fx.plan, fx.data, store);
  REQUIRE(results.size() == 6u);  // 1 strategy x 1 depth x 3 folds x 2 trials
  std::set<std::string> ids;
  for (const auto& r : results) {
    REQUIRE(r.status == "ok");
    ids.insert(r.key.id());
  }
  REQUIRE(ids.size() == 6u);
  for (const auto& r : results)
    if (r.key.id() == sentinel.key.id()) {
      REQUIRE(r.val_acc == 0.123456);
      REQUIRE(r.test_acc == 0.654321);
    }
  const auto lines_after_first = line_count(store.path());
  REQUIRE(lines_after_first == 6u);  // 1 seeded + 5 executed

  // a full re-run appends nothing and returns identical values
  ResultsStore store2(dir.file("results.jsonl"));
  const auto resumed = run_grid(fx.plan, fx.data, store2);
  REQUIRE(resumed.size() == 6u);
  REQUIRE(line_count(store2.path()) == lines_after_first);
  for (std::size_t i = 0; i < resumed.size(); ++i) {
    REQUIRE(resumed[i].key.id() == results[i].key.id());
    REQUIRE(resumed[i].val_acc == results[i].val_acc);
  }
}

TEST_CASE("run_grid records failures without aborting siblings", "[experiment]") {
  DeskFixture fx;
  testutil::TempDir dir;
  ResultsStore store(dir.file("results.jsonl"));

  const std::vector<RunKey> keys = {
      {Strategy::A, 4, 5, 0, 0.0},  // fold 5 does not exist in a 3-fold plan
      {Strategy::A, 4, 0, 0, 0.0},
  };
  const auto results = run_grid(fx.plan, fx.data, store, "", 1, &keys);
  REQUIRE(results.size() == 2u);
  REQUIRE(results[0].status == "error");
  REQUIRE_FALSE(results[0].error.empty());
  REQUIRE(results[1].status == "ok");

  // failed runs stay pending: a resume retries them (and fails again here)
  ResultsStore store2(dir.file("results.jsonl"));
  run_grid(fx.plan, fx.data, store2, "", 1, &keys);
  REQUIRE(line_count(store2.path()) == 3u);  // error, ok, retried error
}

TEST_CASE("summarize aggregates cells and picks the best", "[experiment]") {
  std::vector<RunResult> results;
  results.push_back(ok_result(Strategy::A, 4, 0, 0, 0.80, 0.78, 10));
  results.push_back(ok_result(Strategy::A, 4, 1, 0, 0.84, 0.80, 12));
  results.push_back(ok_result(Strategy::B, 4, 0, 0, 0.82, 0.79, 8));
  results.push_back(ok_result(Strategy::B, 4, 1, 0, 0.82, 0.81, 9));
  RunResult failed;
  failed.key = {Strategy::B, 4, 2, 0, 0.0};
  failed.status = "error";
  failed.error = "boom";
  results.push_back(failed);

  const auto summary = summarize(results, 3);
  REQUIRE(summary.cells.size() == 2u);
  const auto& a = summary.cells[0];
  REQUIRE(a.strategy == Strategy::A);
  REQUIRE(a.val.mean == Catch::Approx(0.82));
  REQUIRE(a.val.std == Catch::Approx(std::sqrt(0.0008)));
  REQUIRE(a.mean_epochs == Catch::Approx(11.0));
  REQUIRE(a.n_ok == 2u);
  REQUIRE(a.n_failed == 0u);
  REQUIRE(a.val_by_fold[0].size() == 1u);
  REQUIRE(a.val_by_fold[2].empty());
  const auto& b = summary.cells[1];
  REQUIRE(b.n_ok == 2u);
  REQUIRE(b.n_failed == 1u);

  // equal means: the tie breaks toward the lower spread (B)
  REQUIRE(summary.best_strategy == Strategy::B);
  REQUIRE(summary.best_depth == 4);

  // equal mean and spread: the tie breaks toward the shallower model
  std::vector<RunResult> tied;
  tied.push_back(ok_result(Strategy::A, 6, 0, 0, 0.8, 0.8));
  tied.push_back(ok_result(Strategy::A, 4, 0, 0, 0.8, 0.8));
  const auto tie_summary = summarize(tied, 3);
  REQUIRE(tie_summary.best_depth == 4);

  // a strictly higher mean beats everything
  tied.push_back(ok_result(Strategy::C, 12, 0, 0, 0.9, 0.9));
  REQUIRE(summarize(tied, 3).best_strategy == Strategy::C);

  REQUIRE_THROWS_AS(summarize({}, 3), EmptyStore);
  std::vector<RunResult> all_failed = {failed};
  REQUIRE_THROWS_AS(summarize(all_failed, 3), EmptyStore);
}

TEST_CASE("grid_keys covers the plan in canonical order", "[experiment]") {
  ExperimentPlan plan;  // defaults: 3 strategies, 5 depths, k=7, 10 trials
  const auto keys = grid_keys(plan);
  REQUIRE(keys.size() == 3u * 5u * 7u * 10u);
  std::set<std::string> ids;
  for (const auto& k : keys) ids.insert(k.id());
  REQUIRE(ids.size() == keys.size());
  REQUIRE(keys.front().id() == "A-d4-f0-t0-p0");
  REQUIRE(keys.back().id() == "C-d12-f6-t9-p0");
}

TEST_CASE("plan validation", "[experiment]") {
  ExperimentPlan plan;
  REQUIRE_NOTHROW(plan.validate());
  auto bad = plan;
  bad.strategies.clear();
  REQUIRE_THROWS_AS(bad.validate(), InvalidSpec);
  bad = plan;
  bad.trials = 0;
  REQUIRE_THROWS_AS(bad.validate(), InvalidSpec);
  bad = plan;
  bad.k = 1;
  REQUIRE_THROWS_AS(bad.validate(), InvalidSpec);
  bad = plan;
  bad.train.batch_size = 0;
  REQUIRE_THROWS_AS(bad.validate(), InvalidSpec);
}

TEST_CASE("dropout ablation sweeps the grid and formats the table", "[experiment]") {
  DeskFixture fx;
  fx.plan.trials = 1;
  fx.plan.dropout_grid = {0.0, 0.25};
  testutil::TempDir dir;
  ResultsStore store(dir.file("results.jsonl"));

  const auto table = run_dropout_ablation(fx.plan, fx.data, Strategy::A, 4, store);
  REQUIRE(table.strategy == Strategy::A);
  REQUIRE(table.depth == 4);
  REQUIRE(table.rows.size() == 2u);
  REQUIRE(table.rows[0].dropout == 0.0);
  REQUIRE(table.rows[1].dropout == 0.25);
  for (const auto& row : table.rows) {
    REQUIRE(row.val.n == 3u);  // k folds x 1 trial
    REQUIRE(row.mean_epochs == Catch::Approx(1.0));
  }

  std::ostringstream os;
  write_ablation_table(os, table);
  std::istringstream lines(os.str());
  std::string header;
  std::getline(lines, header);
  REQUIRE(header == "Dropout\tValidation accuracy\tTesting accuracy\tN. epochs");
  std::string row0;
  std::getline(lines, row0);
  REQUIRE(row0.substr(0, 5) == "0.00\t");
  REQUIRE(row0.find(" ± ") != std::string::npos);
  std::string row1;
  std::getline(lines, row1);
  REQUIRE(row1.substr(0, 5) == "0.25\t");
  REQUIRE(row1.back() == '1');  // one epoch, rendered with no decimals
}

TEST_CASE("external evaluation resizes through the same pipeline", "[experiment]") {
  DeskFixture fx;
  testutil::TempDir dir;
  const RunKey key{Strategy::A, 4, 0, 0, 0.0};
  const auto r = run_one(fx.plan, fx.data, key, dir.path());
  REQUIRE(r.status == "ok");
  REQUIRE_FALSE(r.checkpoint_path.empty());

  // same-dims external set: matches a manual normalize + evaluate
  SyntheticSpec ext_spec;
  ext_spec.nx = 6;
  ext_spec.ny = 6;
  ext_spec.nz = 5;
  ext_spec.n_class0 = 3;
  ext_spec.n_class1 = 3;
  ext_spec.seed = 77;
  auto external = generate_synthetic<float>(ext_spec);
  const auto ev = evaluate_external(r.checkpoint_path, external);
  REQUIRE(ev.n_samples == 6u);
  REQUIRE(ev.rates.cm.total() == 6);
  REQUIRE(ev.roc_curve.size() >= 2u);
  REQUIRE(ev.report.accuracy.mean == ev.rates.accuracy);

  auto ck = load_checkpoint<float>(r.checkpoint_path);
  auto manual = external;
  for (auto& s : manual) s.vol = normalize_intensity(s.vol);
  REQUIRE(ev.rates.accuracy == evaluate(ck.model, manual).accuracy);

  // mismatched dims get resized instead of rejected
  SyntheticSpec big = ext_spec;
  big.nx = 9;
  big.ny = 8;
  big.nz = 7;
  const auto ev2 = evaluate_external(r.checkpoint_path, generate_synthetic<float>(big));
  REQUIRE(ev2.n_samples == 6u);
  REQUIRE(ev2.rates.cm.total() == 6);

  REQUIRE_THROWS_AS(evaluate_external(r.checkpoint_path, {}), EmptySplit);
}
