#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "helpers.hpp"
#include "voxkit/metrics.hpp"
#include "voxkit/rng.hpp"

using namespace voxkit;

namespace {

// Pairwise Mann-Whitney probability: P(pos > neg) + 0.5 P(pos == neg),
// evaluated literally over all positive/negative pairs.
double pairwise_auc(const std::vector<int>& labels, const std::vector<double>& scores) {
  double wins = 0;
  std::size_t pairs = 0;
  for (std::size_t p = 0; p < labels.size(); ++p) {
    if (labels[p] != 1) continue;
    for (std::size_t q = 0; q < labels.size(); ++q) {
      if (labels[q] != 0) continue;
      ++pairs;
      if (scores[p] > scores[q]) wins += 1.0;
      else if (scores[p] == scores[q]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

// PR area by explicit confusion counting at every unique threshold,
// highest first, step-summed against the recall increments.
double threshold_pr_auc(const std::vector<int>& labels, const std::vector<double>& scores) {
  std::set<double, std::greater<double>> thresholds(scores.begin(), scores.end());
  std::size_t n_pos = 0;
  for (int l : labels) n_pos += l == 1 ? 1 : 0;
  double area = 0, prev_recall = 0;
  for (double th : thresholds) {
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (scores[i] >= th) {
        if (labels[i] == 1) ++tp;
        else ++fp;
      }
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return area;
}

}  // namespace

TEST_CASE("roc auc equals the pairwise statistic, ties included", "[metrics]") {
  SeededRng rng(50);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 5 + rng.below(196);
    std::vector<int> labels(n);
    std::vector<double> scores(n);
    bool has0 = false, has1 = false;
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = static_cast<int>(rng.below(2));
      // a coarse score grid forces plenty of exact ties
      scores[i] = static_cast<double>(rng.below(8)) / 4.0;
      (labels[i] ? has1 : has0) = true;
    }
    if (!has0 || !has1) {
      labels[0] = 0;
      labels[1] = 1;
    }
    REQUIRE(roc_auc(labels, scores) == pairwise_auc(labels, scores));
  }
}

TEST_CASE("roc auc closed-form cases", "[metrics]") {
  REQUIRE(roc_auc({0, 0, 1, 1}, {0.1, 0.2, 0.8, 0.9}) == 1.0);
  REQUIRE(roc_auc({1, 1, 0, 0}, {0.1, 0.2, 0.8, 0.9}) == 0.0);
  REQUIRE(roc_auc({0, 1, 0, 1}, {0.1, 0.2, 0.3, 0.4}) == 0.75);
  // indistinguishable scores: chance level, exactly
  REQUIRE(roc_auc({0, 1, 0, 1, 1}, {0.4, 0.4, 0.4, 0.4, 0.4}) == 0.5);
}

TEST_CASE("pr auc matches an explicit threshold sweep", "[metrics]") {
  SeededRng rng(51);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 4 + rng.below(120);
    std::vector<int> labels(n);
    std::vector<double> scores(n);
    bool has1 = false;
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = static_cast<int>(rng.below(2));
      scores[i] = static_cast<double>(rng.below(6)) / 3.0;
      has1 = has1 || labels[i] == 1;
    }
    if (!has1) labels[0] = 1;
    REQUIRE(pr_auc(labels, scores) ==
            Catch::Approx(threshold_pr_auc(labels, scores)).margin(1e-12));
  }
}

TEST_CASE("pr auc closed-form cases", "[metrics]") {
  REQUIRE(pr_auc({0, 0, 1, 1}, {0.1, 0.2, 0.8, 0.9}) == 1.0);
  // all scores equal: one step, precision = prevalence
  REQUIRE(pr_auc({0, 1, 0, 1, 1}, {0.2, 0.2, 0.2, 0.2, 0.2}) == Catch::Approx(0.6));
}

TEST_CASE("roc points trace a staircase consistent with the auc", "[metrics]") {
  SeededRng rng(52);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 6 + rng.below(60);
    std::vector<int> labels(n);
    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = static_cast<int>(rng.below(2));
      scores[i] = static_cast<double>(rng.below(5));
    }
    labels[0] = 0;
    labels[1] = 1;
    const auto pts = roc_points(labels, scores);
    REQUIRE(pts.front() == std::array<double, 2>{0.0, 0.0});
    REQUIRE(pts.back() == std::array<double, 2>{1.0, 1.0});
    double area = 0;
    for (std::size_t i = 1; i < pts.size(); ++i) {
      REQUIRE(pts[i][0] >= pts[i - 1][0]);
      REQUIRE(pts[i][1] >= pts[i - 1][1]);
      area += (pts[i][0] - pts[i - 1][0]) * 0.5 * (pts[i][1] + pts[i - 1][1]);
    }
    // trapezoids over the tie-grouped staircase equal the mid-rank statistic
    REQUIRE(area == Catch::Approx(roc_auc(labels, scores)).margin(1e-12));
  }
}

TEST_CASE("confusion matrix and per-class rates", "[metrics]") {
  const std::vector<int> labels = {1, 1, 0, 0, 1};
  const std::vector<int> preds = {1, 0, 0, 1, 1};
  const auto rep = confusion_and_rates(labels, preds);
  REQUIRE(rep.cm.tp == 2);
  REQUIRE(rep.cm.fn == 1);
  REQUIRE(rep.cm.tn == 1);
  REQUIRE(rep.cm.fp == 1);
  REQUIRE(rep.cm.total() == 5);
  REQUIRE(rep.accuracy == Catch::Approx(0.6));
  REQUIRE(rep.per_class[1].precision == Catch::Approx(2.0 / 3.0));
  REQUIRE(rep.per_class[1].recall == Catch::Approx(2.0 / 3.0));
  REQUIRE(rep.per_class[1].f1 == Catch::Approx(2.0 / 3.0));
  // CN rates come from the same matrix with the roles swapped
  REQUIRE(rep.per_class[0].precision == Catch::Approx(0.5));
  REQUIRE(rep.per_class[0].recall == Catch::Approx(0.5));

  SeededRng rng(53);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(80);
    std::vector<int> l(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      l[i] = static_cast<int>(rng.below(2));
      p[i] = static_cast<int>(rng.below(2));
    }
    const auto r = confusion_and_rates(l, p);
    std::int64_t agree = 0;
    for (std::size_t i = 0; i < n; ++i) agree += l[i] == p[i] ? 1 : 0;
    REQUIRE(r.cm.tp + r.cm.tn == agree);
    REQUIRE(r.cm.total() == static_cast<std::int64_t>(n));
    REQUIRE(r.accuracy ==
            Catch::Approx(static_cast<double>(agree) / static_cast<double>(n)).margin(1e-15));
  }
}

TEST_CASE("zero-denominator rates are flagged, not poisoned", "[metrics]") {
  // nothing predicted positive: AD precision undefined
  const auto rep = confusion_and_rates({0, 1, 0}, {0, 0, 0});
  REQUIRE_FALSE(rep.per_class[1].precision_defined);
  REQUIRE(rep.per_class[1].precision == 0.0);
  REQUIRE(rep.per_class[1].recall_defined);
  REQUIRE(rep.per_class[1].recall == 0.0);
  REQUIRE(std::isfinite(rep.per_class[1].f1));

  // no positive labels at all: AD recall undefined
  const auto rep2 = confusion_and_rates({0, 0, 0}, {1, 0, 0});
  REQUIRE(rep2.per_class[0].precision_defined);  // CN precision stays fine
  REQUIRE_FALSE(rep2.per_class[1].recall_defined);
}

TEST_CASE("metric input validation", "[metrics]") {
  REQUIRE_THROWS_AS(confusion_and_rates({0, 1}, {0}), LengthMismatch);
  REQUIRE_THROWS_AS(confusion_and_rates({}, {}), LengthMismatch);
  REQUIRE_THROWS_AS(roc_auc({0, 1}, {0.5}), LengthMismatch);
  REQUIRE_THROWS_AS(roc_auc({0, 0}, {0.1, 0.2}), SingleClass);
  REQUIRE_THROWS_AS(roc_auc({1, 1}, {0.1, 0.2}), SingleClass);
  REQUIRE_THROWS_AS(roc_points({0, 0}, {0.1, 0.2}), SingleClass);
  REQUIRE_THROWS_AS(pr_auc({0, 0}, {0.1, 0.2}), NoPositives);
  REQUIRE_THROWS_AS(pr_auc({0, 1}, {0.5}), LengthMismatch);
}

TEST_CASE("aggregate computes mean and sample deviation", "[metrics]") {
  const auto two = aggregate({0.80, 0.84});
  REQUIRE(two.mean == Catch::Approx(0.82));
  REQUIRE(two.std == Catch::Approx(std::sqrt(0.0008)));  // n-1 denominator
  REQUIRE(two.n == 2u);

  const auto one = aggregate({0.75});
  REQUIRE(one.mean == 0.75);
  REQUIRE(one.std == 0.0);
  REQUIRE(one.n == 1u);

  const auto many = aggregate({1.0, 2.0, 3.0, 4.0});
  REQUIRE(many.mean == Catch::Approx(2.5));
  REQUIRE(many.std == Catch::Approx(std::sqrt(5.0 / 3.0)));

  REQUIRE_THROWS_AS(aggregate({}), LengthMismatch);
}

TEST_CASE("single_report wraps one evaluation", "[metrics]") {
  const auto rates = confusion_and_rates({1, 1, 0, 0, 1}, {1, 0, 0, 1, 1});
  const auto rep = single_report(rates, 0.9, 0.8);
  REQUIRE(rep.accuracy.mean == Catch::Approx(0.6));
  REQUIRE(rep.accuracy.std == 0.0);
  REQUIRE(rep.accuracy.n == 1u);
  REQUIRE(rep.roc.mean == 0.9);
  REQUIRE(rep.pr.mean == 0.8);
  REQUIRE(rep.precision[1].mean == Catch::Approx(2.0 / 3.0));
  REQUIRE(rep.recall[0].mean == Catch::Approx(0.5));
  REQUIRE(rep.f1[1].n == 1u);
}
