#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "voxkit/common.hpp"
#include "voxkit/model.hpp"
#include "voxkit/train.hpp"

namespace voxkit {

// "VKCP" little-endian
constexpr std::uint32_t kCheckpointMagic = 0x50434B56;
constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void put_tensor(std::ostream& os, const std::vector<T>& t) {
  put_u64(os, t.size());
  for (T v : t) put_f32(os, static_cast<float>(v));
}

template <class T>
void get_tensor(std::istream& is, std::vector<T>& t, std::size_t expected,
                const char* what) {
  const std::uint64_t n = get_u64(is);
  if (n != expected)
    throw CheckpointMismatch(std::string("checkpoint tensor ") + what + " has " +
                             std::to_string(n) + " values, architecture expects " +
                             std::to_string(expected));
  t.resize(expected);
  for (auto& v : t) v = static_cast<T>(get_f32(is));
}

}  // namespace detail

inline void write_arch_spec(std::ostream& os, const ArchitectureSpec& spec) {
  put_u32(os, static_cast<std::uint32_t>(spec.total_conv_layers));
  for (int c : spec.insertion_counts) put_u32(os, static_cast<std::uint32_t>(c));
  put_f64(os, spec.dropout_p);
  put_u32(os, static_cast<std::uint32_t>(spec.num_classes));
  put_u32(os, static_cast<std::uint32_t>(spec.input_nx));
  put_u32(os, static_cast<std::uint32_t>(spec.input_ny));
  put_u32(os, static_cast<std::uint32_t>(spec.input_nz));
  put_u32(os, spec.activation == Activation::Tanh ? 1 : 0);
  put_u32(os, spec.pool_kind == PoolKind::Mean ? 1 : 0);
}

inline ArchitectureSpec read_arch_spec(std::istream& is) {
  ArchitectureSpec spec;
  spec.total_conv_layers = static_cast<int>(get_u32(is));
  for (int& c : spec.insertion_counts) c = static_cast<int>(get_u32(is));
  spec.dropout_p = get_f64(is);
  spec.num_classes = static_cast<int>(get_u32(is));
  spec.input_nx = static_cast<int>(get_u32(is));
  spec.input_ny = static_cast<int>(get_u32(is));
  spec.input_nz = static_cast<int>(get_u32(is));
  spec.activation = get_u32(is) == 1 ? Activation::Tanh : Activation::ReLU;
  spec.pool_kind = get_u32(is) == 1 ? PoolKind::Mean : PoolKind::Max;
  return spec;
}

/// Tensors are stored as little-endian f32 in canonical layer order: per conv
/// unit (w, b, gamma, beta, running_mean, running_var), then fc (w, b);
/// optimizer state (t, m, v) follows when saved.
template <class T>
void save_checkpoint(const std::string& path, const Model<T>& model,
                     const AdamState<T>* opt = nullptr) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint: " + path);
  put_u32(os, kCheckpointMagic);
  put_u32(os, kCheckpointVersion);
  write_arch_spec(os, model.spec);
  put_u32(os, static_cast<std::uint32_t>(model.units.size()));
  for (const auto& u : model.units) {
    detail::put_tensor(os, u.conv.w);
    detail::put_tensor(os, u.conv.b);
    detail::put_tensor(os, u.bn.gamma);
    detail::put_tensor(os, u.bn.beta);
    detail::put_tensor(os, u.bn.running_mean);
    detail::put_tensor(os, u.bn.running_var);
  }
  detail::put_tensor(os, model.fc.w);
  detail::put_tensor(os, model.fc.b);
  put_u32(os, opt ? 1 : 0);
  if (opt) {
    put_u64(os, static_cast<std::uint64_t>(opt->t));
    detail::put_tensor(os, opt->m);
    detail::put_tensor(os, opt->v);
  }
  if (!os) throw IoError("checkpoint write failed: " + path);
}

template <class T = float>
struct Checkpoint {
  Model<T> model;
  bool has_optimizer = false;
  AdamState<T> opt;
};

template <class T = float>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingFile("checkpoint not found: " + path);
  if (get_u32(is) != kCheckpointMagic) throw ParseError("not a checkpoint file: " + path);
  if (get_u32(is) != kCheckpointVersion)
    throw ParseError("unsupported checkpoint version: " + path);
  const ArchitectureSpec spec = read_arch_spec(is);
  try {
    validate_arch(spec);
  } catch (const InvalidSpec& e) {
    throw CheckpointMismatch(std::string("checkpoint carries an invalid architecture: ") +
                             e.what());
  }

  Checkpoint<T> out;
  // rebuild the skeleton from the spec, then overwrite every tensor
  SeededRng scratch(0);
  out.model = build_model<T>(spec, scratch);
  const std::uint32_t n_units = get_u32(is);
  if (n_units != out.model.units.size())
    throw CheckpointMismatch("checkpoint unit count disagrees with its architecture");
  for (auto& u : out.model.units) {
    detail::get_tensor(is, u.conv.w, u.conv.w.size(), "conv.w");
    detail::get_tensor(is, u.conv.b, u.conv.b.size(), "conv.b");
    detail::get_tensor(is, u.bn.gamma, u.bn.gamma.size(), "bn.gamma");
    detail::get_tensor(is, u.bn.beta, u.bn.beta.size(), "bn.beta");
    detail::get_tensor(is, u.bn.running_mean, u.bn.running_mean.size(), "bn.running_mean");
    detail::get_tensor(is, u.bn.running_var, u.bn.running_var.size(), "bn.running_var");
  }
  detail::get_tensor(is, out.model.fc.w, out.model.fc.w.size(), "fc.w");
  detail::get_tensor(is, out.model.fc.b, out.model.fc.b.size(), "fc.b");
  out.has_optimizer = get_u32(is) == 1;
  if (out.has_optimizer) {
    out.opt.t = static_cast<std::int64_t>(get_u64(is));
    std::size_t total = 0;
    for (const auto& r : param_refs(out.model)) total += r.size;
    detail::get_tensor(is, out.opt.m, total, "adam.m");
    detail::get_tensor(is, out.opt.v, total, "adam.v");
  }
  return out;
}

}  // namespace voxkit
