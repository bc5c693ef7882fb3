#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "voxkit/common.hpp"

namespace voxkit {

// AD (label 1) is the positive class.
struct ConfusionMatrix {
  std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;

  std::int64_t total() const { return tp + tn + fp + fn; }
};

struct ClassRates {
  double precision = 0, recall = 0, f1 = 0;
  // zero-denominator convention: the rate is reported as 0 and flagged
  bool precision_defined = true, recall_defined = true;
};

struct RatesReport {
  ConfusionMatrix cm;
  std::array<ClassRates, 2> per_class;  // [0] = CN, [1] = AD
  double accuracy = 0;
};

inline RatesReport confusion_and_rates(const std::vector<int>& labels,
                                       const std::vector<int>& predictions) {
  if (labels.size() != predictions.size())
    throw LengthMismatch("confusion_and_rates: labels and predictions differ in length");
  if (labels.empty()) throw LengthMismatch("confusion_and_rates: empty inputs");
  RatesReport rep;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool pos = labels[i] == 1, pred_pos = predictions[i] == 1;
    if (pos && pred_pos) ++rep.cm.tp;
    else if (!pos && !pred_pos) ++rep.cm.tn;
    else if (!pos && pred_pos) ++rep.cm.fp;
    else ++rep.cm.fn;
  }
  const auto rates = [](std::int64_t tp, std::int64_t fp, std::int64_t fn) {
    ClassRates r;
    if (tp + fp == 0) {
      r.precision_defined = false;
    } else {
      r.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    }
    if (tp + fn == 0) {
      r.recall_defined = false;
    } else {
      r.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    }
    if (r.precision + r.recall > 0)
      r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
    return r;
  };
  // class CN: its "true positives" are tn of the AD-positive matrix
  rep.per_class[0] = rates(rep.cm.tn, rep.cm.fn, rep.cm.fp);
  rep.per_class[1] = rates(rep.cm.tp, rep.cm.fp, rep.cm.fn);
  rep.accuracy = static_cast<double>(rep.cm.tp + rep.cm.tn) / static_cast<double>(rep.cm.total());
  return rep;
}

/// Area under the ROC curve via the mid-rank Mann-Whitney statistic: ties
/// get the average rank, so the result equals the pairwise
/// P(score_pos > score_neg) + 0.5 P(tie) exactly.
inline double roc_auc(const std::vector<int>& labels, const std::vector<double>& scores) {
  if (labels.size() != scores.size())
    throw LengthMismatch("roc_auc: labels and scores differ in length");
  const std::size_t n = labels.size();
  std::size_t n_pos = 0;
  for (int l : labels) n_pos += l == 1 ? 1 : 0;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw SingleClass("roc_auc: need both classes present");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0;  // mid-ranks are half-integers, exact in double
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]] == 1) rank_sum_pos += mid_rank;
    i = j;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// Area under the precision-recall curve by step summation over the sorted
/// unique thresholds (no interpolation): sum over threshold steps of
/// precision * delta_recall, scanning thresholds from high to low.
inline double pr_auc(const std::vector<int>& labels, const std::vector<double>& scores) {
  if (labels.size() != scores.size())
    throw LengthMismatch("pr_auc: labels and scores differ in length");
  std::size_t n_pos = 0;
  for (int l : labels) n_pos += l == 1 ? 1 : 0;
  if (n_pos == 0) throw NoPositives("pr_auc: no positive samples");

  std::vector<std::size_t> order(labels.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double area = 0, prev_recall = 0;
  std::size_t tp = 0, fp = 0, i = 0;
  const std::size_t n = order.size();
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] == 1) ++tp;
      else ++fp;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return area;
}

/// ROC curve points (fpr, tpr) over the unique thresholds, for plotting.
inline std::vector<std::array<double, 2>> roc_points(const std::vector<int>& labels,
                                                     const std::vector<double>& scores) {
  if (labels.size() != scores.size())
    throw LengthMismatch("roc_points: labels and scores differ in length");
  std::size_t n_pos = 0;
  for (int l : labels) n_pos += l == 1 ? 1 : 0;
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw SingleClass("roc_points: need both classes present");
  std::vector<std::size_t> order(labels.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::array<double, 2>> pts{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0, i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] == 1) ++tp;
      else ++fp;
    }
    pts.push_back({static_cast<double>(fp) / static_cast<double>(n_neg),
                   static_cast<double>(tp) / static_cast<double>(n_pos)});
    i = j;
  }
  return pts;
}

// ---------------------------------------------------------------------------
// Aggregation: mean and sample standard deviation (n-1; 0 when n == 1).
// ---------------------------------------------------------------------------

struct MeanStd {
  double mean = 0, std = 0;
  std::size_t n = 0;
};

inline MeanStd aggregate(const std::vector<double>& values) {
  if (values.empty()) throw LengthMismatch("aggregate: empty value list");
  MeanStd out;
  out.n = values.size();
  double sum = 0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

struct MetricReport {
  std::array<MeanStd, 2> precision, recall, f1;  // [0] = CN, [1] = AD
  MeanStd accuracy, roc, pr;
};

/// Report for a single evaluation (std 0, n 1 throughout).
inline MetricReport single_report(const RatesReport& rates, double roc, double pr) {
  MetricReport rep;
  for (int c = 0; c < 2; ++c) {
    rep.precision[c] = {rates.per_class[c].precision, 0, 1};
    rep.recall[c] = {rates.per_class[c].recall, 0, 1};
    rep.f1[c] = {rates.per_class[c].f1, 0, 1};
  }
  rep.accuracy = {rates.accuracy, 0, 1};
  rep.roc = {roc, 0, 1};
  rep.pr = {pr, 0, 1};
  return rep;
}

}  // namespace voxkit
