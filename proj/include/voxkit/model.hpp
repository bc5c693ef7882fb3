#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "voxkit/common.hpp"
#include "voxkit/layers.hpp"
#include "voxkit/rng.hpp"
#include "voxkit/tensor.hpp"

namespace voxkit {

// ---------------------------------------------------------------------------
// Architecture family: four blocks of (conv 3x3x3 + batch norm + activation),
// 8*i filters in block i, pooling 4/3/2/2 after each block, then flatten,
// dropout and a fully connected head. Depths beyond 4 duplicate block conv
// layers round-robin from block 1.
// ---------------------------------------------------------------------------

struct ArchitectureSpec {
  int total_conv_layers = 4;  // one of 4, 6, 8, 10, 12
  std::array<int, 4> insertion_counts{0, 0, 0, 0};
  double dropout_p = 0.0;
  int num_classes = 2;
  int input_nx = 96, input_ny = 96, input_nz = 73;
  Activation activation = Activation::ReLU;
  PoolKind pool_kind = PoolKind::Max;

  static constexpr std::array<int, 4> kPoolSizes{4, 3, 2, 2};
  static constexpr int base_filters(int block) { return 8 * (block + 1); }  // block 0..3
};

inline std::array<int, 4> round_robin_insertions(int total_conv_layers) {
  const int extra = total_conv_layers - 4;
  std::array<int, 4> counts{};
  for (int i = 0; i < 4; ++i) counts[i] = extra / 4 + (i < extra % 4 ? 1 : 0);
  return counts;
}

inline void validate_arch(const ArchitectureSpec& spec) {
  const int d = spec.total_conv_layers;
  if (d != 4 && d != 6 && d != 8 && d != 10 && d != 12)
    throw InvalidSpec("total_conv_layers must be one of 4, 6, 8, 10, 12 (got " +
                      std::to_string(d) + ")");
  int sum = 0;
  for (int c : spec.insertion_counts) sum += c;
  if (sum + 4 != d) throw InvalidSpec("insertion_counts must sum to total_conv_layers - 4");
  if (spec.insertion_counts != round_robin_insertions(d))
    throw InvalidSpec("insertion_counts must follow the round-robin schedule");
  if (!(spec.dropout_p >= 0.0 && spec.dropout_p <= 0.5))
    throw InvalidSpec("dropout_p must lie in [0, 0.5]");
  if (spec.num_classes != 2) throw InvalidSpec("num_classes must be 2");
  if (spec.input_nx < 1 || spec.input_ny < 1 || spec.input_nz < 1)
    throw InvalidSpec("input dims must be positive");
}

inline ArchitectureSpec make_arch_spec(int total_conv_layers, double dropout_p = 0.0,
                                       int nx = 96, int ny = 96, int nz = 73) {
  ArchitectureSpec spec;
  spec.total_conv_layers = total_conv_layers;
  spec.insertion_counts = round_robin_insertions(total_conv_layers);
  spec.dropout_p = dropout_p;
  spec.input_nx = nx;
  spec.input_ny = ny;
  spec.input_nz = nz;
  validate_arch(spec);
  return spec;
}

/// Spatial dims after block `upto` (exclusive end, 0..4) for the given input.
inline std::array<int, 3> pooled_dims_after(const ArchitectureSpec& spec, int upto) {
  std::array<int, 3> d{spec.input_nx, spec.input_ny, spec.input_nz};
  for (int b = 0; b < upto; ++b)
    for (int a = 0; a < 3; ++a) d[a] = pooled_dim(d[a], ArchitectureSpec::kPoolSizes[b]);
  return d;
}

inline int fc_input_length(const ArchitectureSpec& spec) {
  const auto d = pooled_dims_after(spec, 4);
  return ArchitectureSpec::base_filters(3) * d[0] * d[1] * d[2];
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

template <class T>
struct ConvUnit {
  ConvLayer<T> conv;
  BatchNormLayer<T> bn;
};

template <class T>
struct Model {
  ArchitectureSpec spec;
  std::vector<ConvUnit<T>> units;  // block order, duplicates adjacent
  FcLayer<T> fc;

  int units_in_block(int block) const { return 1 + spec.insertion_counts[block]; }
};

template <class T>
struct ParamRef {
  std::string name;
  T* data = nullptr;
  std::size_t size = 0;
  bool decay = false;  // participates in the l2 penalty
};

/// Canonical parameter order: per conv unit (conv.w, conv.b, bn.gamma,
/// bn.beta), then fc.w, fc.b. Optimizer state and gradients are laid out
/// against this order.
template <class T>
std::vector<ParamRef<T>> param_refs(Model<T>& m) {
  std::vector<ParamRef<T>> refs;
  for (std::size_t u = 0; u < m.units.size(); ++u) {
    const std::string p = "conv" + std::to_string(u);
    auto& unit = m.units[u];
    refs.push_back({p + ".w", unit.conv.w.data(), unit.conv.w.size(), true});
    refs.push_back({p + ".b", unit.conv.b.data(), unit.conv.b.size(), false});
    refs.push_back({p + ".gamma", unit.bn.gamma.data(), unit.bn.gamma.size(), false});
    refs.push_back({p + ".beta", unit.bn.beta.data(), unit.bn.beta.size(), false});
  }
  if (!m.fc.w.empty()) {
    refs.push_back({"fc.w", m.fc.w.data(), m.fc.w.size(), true});
    refs.push_back({"fc.b", m.fc.b.data(), m.fc.b.size(), false});
  }
  return refs;
}

/// Non-trainable model state: the batch-norm running statistics, in unit
/// order (running_mean, running_var). Inference behaviour depends on these,
/// so anything that snapshots "the model at epoch k" must capture them
/// alongside param_refs.
template <class T>
std::vector<ParamRef<T>> state_refs(Model<T>& m) {
  std::vector<ParamRef<T>> refs;
  for (std::size_t u = 0; u < m.units.size(); ++u) {
    const std::string p = "conv" + std::to_string(u);
    auto& unit = m.units[u];
    refs.push_back(
        {p + ".running_mean", unit.bn.running_mean.data(), unit.bn.running_mean.size(), false});
    refs.push_back(
        {p + ".running_var", unit.bn.running_var.data(), unit.bn.running_var.size(), false});
  }
  return refs;
}

template <class T>
std::size_t count_parameters(Model<T>& m) {
  std::size_t total = 0;
  for (const auto& r : param_refs(m)) total += r.size;
  return total;
}

template <class T>
std::size_t count_conv_parameters(const Model<T>& m) {
  std::size_t total = 0;
  for (const auto& u : m.units) total += u.conv.w.size() + u.conv.b.size();
  return total;
}

/// Parameters of a plain conv stack (weights + biases only), e.g.
/// filters {32, 64} on 1 input channel -> 56256, {8, 16} -> 3696.
inline std::size_t conv_stack_parameter_count(const std::vector<int>& filters, int in_ch = 1) {
  std::size_t total = 0;
  int prev = in_ch;
  for (int f : filters) {
    total += static_cast<std::size_t>(f) * (27 * static_cast<std::size_t>(prev) + 1);
    prev = f;
  }
  return total;
}

template <class T>
Model<T> build_model(const ArchitectureSpec& spec, SeededRng& rng) {
  validate_arch(spec);
  Model<T> m;
  m.spec = spec;
  // He-style fan-in uniform init: w ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)),
  // biases zero, BN at identity. Draw order is storage order, so equal seeds
  // give equal models.
  const auto init = [&rng](std::vector<T>& w, std::size_t fan_in) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : w) v = static_cast<T>(rng.uniform(-limit, limit));
  };
  int prev_ch = 1;
  for (int block = 0; block < 4; ++block) {
    const int filters = ArchitectureSpec::base_filters(block);
    const int n_units = 1 + spec.insertion_counts[block];
    for (int u = 0; u < n_units; ++u) {
      ConvUnit<T> unit;
      unit.conv = ConvLayer<T>(prev_ch, filters);
      init(unit.conv.w, static_cast<std::size_t>(prev_ch) * 27);
      unit.bn = BatchNormLayer<T>(filters);
      m.units.push_back(std::move(unit));
      prev_ch = filters;
    }
  }
  const int fc_in = fc_input_length(spec);
  m.fc = FcLayer<T>(fc_in, spec.num_classes);
  init(m.fc.w, static_cast<std::size_t>(fc_in));
  return m;
}

// ---------------------------------------------------------------------------
// Forward / backward over the whole chain
// ---------------------------------------------------------------------------

template <class T>
struct UnitCache {
  Batch5D<T> in, conv_out, act_out;
  BnCache<T> bn;
};

template <class T>
struct ForwardCache {
  std::vector<UnitCache<T>> units;
  std::vector<PoolCache<T>> pools;  // one per block
  Mat<T> flat;                      // flatten output == dropout input
  DropoutCache<T> dropout;
  Mat<T> fc_in;                     // dropout output
};

template <class T>
struct ForwardResult {
  Mat<T> logits;
  std::vector<Mat<T>> embeddings;  // flattened post-activation maps, one per conv unit
};

template <class T>
Mat<T> flatten_batch(const Batch5D<T>& x) {
  Mat<T> m(x.n, static_cast<int>(x.size() / std::max(1, x.n)));
  m.data = x.data;
  return m;
}

template <class T>
Batch5D<T> unflatten_batch(const Mat<T>& m, int c, int x, int y, int z) {
  Batch5D<T> b(m.rows, c, x, y, z);
  if (b.size() != m.data.size()) throw ShapeMismatch("unflatten_batch: element count mismatch");
  b.data = m.data;
  return b;
}

template <class T>
ForwardResult<T> forward(Model<T>& model, const Batch5D<T>& batch, Mode mode,
                         SeededRng* rng = nullptr, ForwardCache<T>* cache = nullptr,
                         bool capture_embeddings = false) {
  const auto& spec = model.spec;
  if (batch.c != 1 || batch.x != spec.input_nx || batch.y != spec.input_ny ||
      batch.z != spec.input_nz)
    throw ShapeMismatch("forward: batch dims do not match the architecture input dims");
  ForwardResult<T> out;
  if (cache) {
    cache->units.clear();
    cache->pools.assign(4, PoolCache<T>{});
  }
  Batch5D<T> cur = batch;
  std::size_t unit_idx = 0;
  for (int block = 0; block < 4; ++block) {
    const int n_units = model.units_in_block(block);
    for (int u = 0; u < n_units; ++u, ++unit_idx) {
      auto& unit = model.units[unit_idx];
      BnCache<T> bn_cache;
      Batch5D<T> conv_out = conv3d_forward(cur, unit.conv);
      Batch5D<T> bn_out = batchnorm3d_forward(conv_out, unit.bn, mode,
                                              cache ? &bn_cache : nullptr);
      Batch5D<T> act_out = activation_forward(bn_out, spec.activation);
      if (capture_embeddings) out.embeddings.push_back(flatten_batch(act_out));
      if (cache) {
        UnitCache<T> uc;
        uc.in = std::move(cur);
        uc.conv_out = std::move(conv_out);
        uc.act_out = act_out;
        uc.bn = std::move(bn_cache);
        cache->units.push_back(std::move(uc));
      }
      cur = std::move(act_out);
    }
    cur = pool3d_forward(cur, ArchitectureSpec::kPoolSizes[block], spec.pool_kind,
                         cache ? &cache->pools[block] : nullptr);
  }
  Mat<T> flat = flatten_batch(cur);
  DropoutCache<T> drop_cache;
  Mat<T> fc_in = dropout_forward(flat, spec.dropout_p, mode, rng,
                                 cache ? &drop_cache : nullptr);
  out.logits = fc_forward(fc_in, model.fc);
  if (cache) {
    cache->flat = std::move(flat);
    cache->dropout = std::move(drop_cache);
    cache->fc_in = std::move(fc_in);
  }
  return out;
}

/// Gradients laid out per param_refs order, one flat buffer per ref.
template <class T>
struct ModelGrads {
  std::vector<std::vector<T>> by_ref;
};

template <class T>
ModelGrads<T> backward(Model<T>& model, const ForwardCache<T>& cache, const Mat<T>& grad_logits) {
  ModelGrads<T> grads;
  grads.by_ref.resize(4 * model.units.size() + 2);

  FcGrads<T> fcg = fc_backward(cache.fc_in, model.fc, grad_logits);
  grads.by_ref[4 * model.units.size()] = std::move(fcg.gw);
  grads.by_ref[4 * model.units.size() + 1] = std::move(fcg.gb);

  Mat<T> gflat = dropout_backward(fcg.gx, cache.dropout);
  const auto& last_pool = cache.pools[3];
  Batch5D<T> g = unflatten_batch(gflat, last_pool.c, pooled_dim(last_pool.in_x, last_pool.size),
                                 pooled_dim(last_pool.in_y, last_pool.size),
                                 pooled_dim(last_pool.in_z, last_pool.size));

  int unit_idx = static_cast<int>(model.units.size()) - 1;
  for (int block = 3; block >= 0; --block) {
    g = pool3d_backward(cache.pools[block], g);
    const int n_units = model.units_in_block(block);
    for (int u = n_units - 1; u >= 0; --u, --unit_idx) {
      auto& unit = model.units[unit_idx];
      const auto& uc = cache.units[unit_idx];
      Batch5D<T> g_bn_out = activation_backward(uc.act_out, g, model.spec.activation);
      BnGrads<T> bng = batchnorm3d_backward(uc.conv_out, unit.bn, uc.bn, g_bn_out);
      ConvGrads<T> cg = conv3d_backward(uc.in, unit.conv, bng.gx, unit_idx > 0);
      grads.by_ref[4 * unit_idx] = std::move(cg.gw);
      grads.by_ref[4 * unit_idx + 1] = std::move(cg.gb);
      grads.by_ref[4 * unit_idx + 2] = std::move(bng.ggamma);
      grads.by_ref[4 * unit_idx + 3] = std::move(bng.gbeta);
      if (unit_idx > 0) g = std::move(cg.gx);
    }
  }
  return grads;
}

}  // namespace voxkit
