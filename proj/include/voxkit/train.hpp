#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "voxkit/augment.hpp"
#include "voxkit/common.hpp"
#include "voxkit/model.hpp"
#include "voxkit/rng.hpp"

namespace voxkit {

struct TrainConfig {
  double learning_rate = 0.001;
  double l2_weight = 0.01;
  int max_epochs = 200;
  int patience = 20;
  int batch_size = 50;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  bool drop_last = false;  // default keeps the final partial minibatch
};

inline void validate_train_config(const TrainConfig& cfg) {
  if (!(cfg.learning_rate > 0) || !(cfg.adam_epsilon > 0) || cfg.l2_weight < 0)
    throw InvalidSpec("train config: rates must be positive");
  if (cfg.max_epochs < 1 || cfg.patience < 1 || cfg.batch_size < 1)
    throw InvalidSpec("train config: epochs, patience and batch size must be positive");
  if (cfg.patience > cfg.max_epochs)
    throw InvalidSpec("train config: patience must not exceed max_epochs");
  if (!(cfg.adam_beta1 > 0 && cfg.adam_beta1 < 1 && cfg.adam_beta2 > 0 && cfg.adam_beta2 < 1))
    throw InvalidSpec("train config: Adam betas must lie in (0, 1)");
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <class T>
struct AdamState {
  std::vector<T> m, v;  // flat, laid out against param_refs order
  std::int64_t t = 0;
};

namespace detail {

template <class T>
void adam_apply(T* p, const T* g, T* m, T* v, std::size_t n, double lr, double beta1,
                double beta2, double eps, double bc1, double bc2) {
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = static_cast<T>(beta1 * m[i] + (1.0 - beta1) * g[i]);
    v[i] = static_cast<T>(beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]);
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
  }
}

}  // namespace detail

/// One bias-corrected Adam update over the model's parameter list.
template <class T>
void adam_step(const std::vector<ParamRef<T>>& refs, const ModelGrads<T>& grads,
               AdamState<T>& state, const TrainConfig& cfg) {
  if (grads.by_ref.size() != refs.size())
    throw ShapeMismatch("adam_step: gradient list does not match parameter list");
  std::size_t total = 0;
  for (const auto& r : refs) total += r.size;
  if (state.m.empty()) {
    state.m.assign(total, T(0));
    state.v.assign(total, T(0));
  } else if (state.m.size() != total) {
    throw ShapeMismatch("adam_step: optimizer state does not match parameter count");
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.t));
  std::size_t off = 0;
  for (std::size_t r = 0; r < refs.size(); ++r) {
    if (grads.by_ref[r].size() != refs[r].size)
      throw ShapeMismatch("adam_step: gradient size mismatch at " + refs[r].name);
    detail::adam_apply(refs[r].data, grads.by_ref[r].data(), state.m.data() + off,
                       state.v.data() + off, refs[r].size, cfg.learning_rate, cfg.adam_beta1,
                       cfg.adam_beta2, cfg.adam_epsilon, bc1, bc2);
    off += refs[r].size;
  }
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Mean cross-entropy over the batch plus l2_weight * sum(w^2) over conv and
/// FC weights (biases and BN parameters excluded). Gradients include the
/// 2*l2*w penalty term.
template <class T>
std::pair<double, ModelGrads<T>> total_loss(Model<T>& model, const Batch5D<T>& batch,
                                            const std::vector<int>& labels,
                                            const TrainConfig& cfg, Mode mode = Mode::Train,
                                            SeededRng* rng = nullptr,
                                            Mat<T>* logits_out = nullptr) {
  ForwardCache<T> cache;
  ForwardResult<T> fwd = forward(model, batch, mode, rng, &cache);
  auto [data_loss, grad_logits] = softmax_crossentropy_batch(fwd.logits, labels);
  ModelGrads<T> grads = backward(model, cache, grad_logits);
  double loss = static_cast<double>(data_loss);
  auto refs = param_refs(model);
  const T two_l2 = static_cast<T>(2.0 * cfg.l2_weight);
  for (std::size_t r = 0; r < refs.size(); ++r) {
    if (!refs[r].decay) continue;
    loss += cfg.l2_weight * static_cast<double>(detail::chunked_sum_sq(refs[r].data, refs[r].size));
    auto& g = grads.by_ref[r];
    for (std::size_t i = 0; i < refs[r].size; ++i) g[i] += two_l2 * refs[r].data[i];
  }
  if (logits_out) *logits_out = std::move(fwd.logits);
  return {loss, std::move(grads)};
}

// ---------------------------------------------------------------------------
// History
// ---------------------------------------------------------------------------

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0;
  double train_acc = 0;
  double val_acc = 0;
  // min / q25 / median / q75 / max of the predicted-class probability over
  // the epoch's training outputs
  std::array<double, 5> prob_quantiles{};
};

struct TrainHistory {
  std::vector<EpochRecord> records;
};

namespace detail {

/// Linear-interpolation quantiles at 0, .25, .5, .75, 1 of an unsorted list.
inline std::array<double, 5> quantiles5(std::vector<double> v) {
  std::array<double, 5> q{};
  if (v.empty()) return q;
  std::sort(v.begin(), v.end());
  const auto at = [&](double p) {
    const double idx = p * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(idx);
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = idx - static_cast<double>(lo);
    return v[lo] + (v[hi] - v[lo]) * frac;
  };
  q = {v.front(), at(0.25), at(0.5), at(0.75), v.back()};
  return q;
}

}  // namespace detail

inline void write_history(std::ostream& os, const TrainHistory& h) {
  os << "epoch\tloss\ttrain_acc\tval_acc\tp_min\tp_q25\tp_med\tp_q75\tp_max\n";
  for (const auto& r : h.records) {
    os << r.epoch << '\t' << g17(r.train_loss) << '\t' << g17(r.train_acc) << '\t'
       << g17(r.val_acc);
    for (double q : r.prob_quantiles) os << '\t' << g17(q);
    os << '\n';
  }
}

inline void write_history(const std::string& path, const TrainHistory& h) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write history file: " + path);
  write_history(os, h);
}

inline TrainHistory load_history(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw MissingFile("history file not found: " + path);
  TrainHistory h;
  std::string line;
  if (!std::getline(is, line)) throw ParseError("empty history file: " + path);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    EpochRecord r;
    ls >> r.epoch >> r.train_loss >> r.train_acc >> r.val_acc;
    for (double& q : r.prob_quantiles) ls >> q;
    if (ls.fail()) throw ParseError("malformed history row: " + line);
    h.records.push_back(r);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

template <class T>
struct EvalResult {
  double accuracy = 0;
  std::vector<int> predictions;
  std::vector<double> prob_positive;           // P(label 1) per sample
  std::vector<std::array<double, 2>> probs;    // per-class probabilities
  std::vector<std::array<double, 2>> logits;
};

/// Infer-mode forward in minibatches; accuracy is the argmax-correct fraction
/// (equal logits resolve to class 0).
template <class T>
EvalResult<T> evaluate(Model<T>& model, const std::vector<LabeledVolume<T>>& set,
                       int batch_size = 50) {
  if (set.empty()) throw EmptySplit("evaluate: empty sample set");
  EvalResult<T> out;
  const auto& spec = model.spec;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < set.size(); start += batch_size) {
    const int n = static_cast<int>(std::min<std::size_t>(batch_size, set.size() - start));
    Batch5D<T> batch(n, 1, spec.input_nx, spec.input_ny, spec.input_nz);
    for (int b = 0; b < n; ++b) batch.load_sample(b, set[start + b].vol);
    ForwardResult<T> fwd = forward(model, batch, Mode::Infer);
    for (int b = 0; b < n; ++b) {
      const T* row = fwd.logits.row(b);
      auto p = softmax_probs(row, 2);
      const int pred = row[1] > row[0] ? 1 : 0;
      out.predictions.push_back(pred);
      out.probs.push_back({static_cast<double>(p[0]), static_cast<double>(p[1])});
      out.prob_positive.push_back(static_cast<double>(p[1]));
      out.logits.push_back({static_cast<double>(row[0]), static_cast<double>(row[1])});
      if (pred == set[start + b].label) ++correct;
    }
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(set.size());
  return out;
}

// ---------------------------------------------------------------------------
// fit: epoch loop, seeded shuffling, early stopping on validation accuracy
// ---------------------------------------------------------------------------

struct FitResult {
  TrainHistory history;
  int stopped_epoch = 0;  // number of epochs actually run
  int best_epoch = 0;
  double best_val_acc = 0;
};

/// Train with Adam and strict-improvement early stopping. The best-epoch
/// weights are restored before returning, passed through an f32 snapshot so
/// the in-memory model matches its checkpoint bit-for-bit. `val_eval`
/// overrides the validation measurement (tests inject constructed traces);
/// by default validation accuracy comes from evaluate() on `val`.
template <class T>
FitResult fit(Model<T>& model, const std::vector<LabeledVolume<T>>& train,
              const std::vector<LabeledVolume<T>>& val, const TrainConfig& cfg,
              std::function<double(Model<T>&, int)> val_eval = {}) {
  validate_train_config(cfg);
  if (train.empty()) throw EmptySplit("fit: empty training set");
  if (val.empty() && !val_eval) throw EmptySplit("fit: empty validation set");
  const auto& spec = model.spec;

  SeededRng rng(cfg.seed);
  auto refs = param_refs(model);
  AdamState<T> state;
  FitResult out;

  // The snapshot must cover the full inference state: trainable parameters
  // plus the batch-norm running statistics. Restoring only the parameters
  // would pair best-epoch weights with stopped-epoch statistics, which
  // corrupts the model whenever the best epoch comes early.
  auto states = state_refs(model);
  std::vector<float> best_snapshot;
  const auto snapshot = [&] {
    best_snapshot.clear();
    for (const auto& r : refs)
      for (std::size_t i = 0; i < r.size; ++i)
        best_snapshot.push_back(static_cast<float>(r.data[i]));
    for (const auto& r : states)
      for (std::size_t i = 0; i < r.size; ++i)
        best_snapshot.push_back(static_cast<float>(r.data[i]));
  };
  const auto restore = [&] {
    std::size_t k = 0;
    for (const auto& r : refs)
      for (std::size_t i = 0; i < r.size; ++i) r.data[i] = static_cast<T>(best_snapshot[k++]);
    for (const auto& r : states)
      for (std::size_t i = 0; i < r.size; ++i) r.data[i] = static_cast<T>(best_snapshot[k++]);
  };

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  int stale = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0;
    std::size_t seen = 0, correct = 0;
    std::vector<double> pred_probs;
    pred_probs.reserve(train.size());

    for (std::size_t start = 0; start < train.size();) {
      std::size_t n = std::min<std::size_t>(cfg.batch_size, train.size() - start);
      if (cfg.drop_last && n < static_cast<std::size_t>(cfg.batch_size) && start > 0) break;
      Batch5D<T> batch(static_cast<int>(n), 1, spec.input_nx, spec.input_ny, spec.input_nz);
      std::vector<int> labels(n);
      for (std::size_t b = 0; b < n; ++b) {
        const auto& s = train[order[start + b]];
        batch.load_sample(static_cast<int>(b), s.vol);
        labels[b] = s.label;
      }
      Mat<T> logits;
      auto [loss, grads] = total_loss(model, batch, labels, cfg, Mode::Train, &rng, &logits);
      adam_step(refs, grads, state, cfg);

      loss_sum += loss * static_cast<double>(n);
      seen += n;
      for (std::size_t b = 0; b < n; ++b) {
        const T* row = logits.row(static_cast<int>(b));
        auto p = softmax_probs(row, 2);
        const int pred = row[1] > row[0] ? 1 : 0;
        pred_probs.push_back(static_cast<double>(p[pred]));
        if (pred == labels[b]) ++correct;
      }
      start += n;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    rec.prob_quantiles = detail::quantiles5(std::move(pred_probs));
    rec.val_acc = val_eval ? val_eval(model, epoch) : evaluate(model, val).accuracy;
    out.history.records.push_back(rec);
    out.stopped_epoch = epoch;

    if (rec.val_acc > out.best_val_acc || out.best_epoch == 0) {
      out.best_val_acc = rec.val_acc;
      out.best_epoch = epoch;
      snapshot();
      stale = 0;
    } else {
      ++stale;  // ties do not reset patience
    }
    if (stale >= cfg.patience) break;
  }

  restore();
  return out;
}

}  // namespace voxkit
