#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "voxkit/common.hpp"
#include "voxkit/rng.hpp"
#include "voxkit/tensor.hpp"

namespace voxkit {

enum class Mode { Train, Infer };
enum class PoolKind { Max, Mean };
enum class Activation { ReLU, Tanh };

// ---------------------------------------------------------------------------
// 3D convolution, fixed 3x3x3 kernel, stride 1, zero-padded "same"
// cross-correlation.
// ---------------------------------------------------------------------------

template <class T>
struct ConvLayer {
  int in_ch = 0, out_ch = 0;
  std::vector<T> w;  // (out_ch, in_ch, 3, 3, 3), tap index ((dx+1)*3+(dy+1))*3+(dz+1)
  std::vector<T> b;  // out_ch

  ConvLayer() = default;
  ConvLayer(int in, int out)
      : in_ch(in), out_ch(out), w(static_cast<std::size_t>(out) * in * 27), b(out) {}

  std::size_t widx(int oc, int ic, int tap) const {
    return (static_cast<std::size_t>(oc) * in_ch + ic) * 27 + tap;
  }
};

namespace detail {

// Zero-padded channel slabs turn the "same" convolution into boundary-free
// shifted multiply-adds over long contiguous runs: skipped edge taps become
// exact +0 contributions, so results match the skip-out-of-range definition
// bit-for-bit while the inner loops vectorize over a whole (y,z) plane.
template <class T>
struct PaddedSlabs {
  int X = 0, Y = 0, Z = 0, Xp = 0, Yp = 0, Zp = 0;
  std::size_t planep = 0;  // Yp * Zp
  std::size_t slabp = 0;   // Xp * planep
  std::size_t guard = 0;   // planep + Zp + 1: worst shifted read past a slab
  std::vector<T> buf;
  int channels = 0;

  void reshape(int ch, int x, int y, int z) {
    X = x; Y = y; Z = z;
    Xp = x + 2; Yp = y + 2; Zp = z + 2;
    planep = static_cast<std::size_t>(Yp) * Zp;
    slabp = static_cast<std::size_t>(Xp) * planep;
    guard = planep + Zp + 1;
    channels = ch;
    buf.assign(2 * guard + static_cast<std::size_t>(ch) * slabp, T(0));
  }

  T* slab(int ch) { return buf.data() + guard + static_cast<std::size_t>(ch) * slabp; }
  const T* slab(int ch) const {
    return buf.data() + guard + static_cast<std::size_t>(ch) * slabp;
  }

  // Copy one sample's channels into the interior; pads stay zero.
  void fill(const T* src, int ch) {
    const std::size_t plane = static_cast<std::size_t>(Y) * Z;
    for (int c = 0; c < ch; ++c) {
      T* dst = slab(c);
      const T* s = src + static_cast<std::size_t>(c) * X * plane;
      for (int x = 0; x < X; ++x)
        for (int y = 0; y < Y; ++y)
          std::copy_n(s + static_cast<std::size_t>(x) * plane + static_cast<std::size_t>(y) * Z,
                      Z,
                      dst + static_cast<std::size_t>(x + 1) * planep +
                          static_cast<std::size_t>(y + 1) * Zp + 1);
    }
  }
};

// One x-plane of NB output channels: accumulate all input channels and taps
// into a padded plane buffer, then copy the interior rows out.
template <int NB, class T, class WGet>
void conv_plane_block(const PaddedSlabs<T>& pin, int cin, T* out, int co0, int x, WGet&& wget,
                      const T* bias, T* acc) {
  const std::size_t planep = pin.planep;
  const int Zp = pin.Zp;
  for (int u = 0; u < NB; ++u) {
    const T init = bias ? bias[co0 + u] : T(0);
    std::fill_n(acc + static_cast<std::size_t>(u) * planep, planep, init);
  }
  T wl[NB][27];
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(planep);
  for (int ci = 0; ci < cin; ++ci) {
    for (int u = 0; u < NB; ++u)
      for (int t = 0; t < 27; ++t) wl[u][t] = wget(co0 + u, ci, t);
    const T* slab = pin.slab(ci);
    for (int dx = -1; dx <= 1; ++dx) {
      const T* plane = slab + static_cast<std::size_t>(x + dx + 1) * planep;
      // one plane pass covers the nine (dy, dz) taps: three shifted rows,
      // one accumulator round-trip
      const T* __restrict rm = plane - Zp;
      const T* __restrict r0 = plane;
      const T* __restrict rp = plane + Zp;
      const int tb = (dx + 1) * 9;
      for (int u = 0; u < NB; ++u) {
        const T w0 = wl[u][tb], w1 = wl[u][tb + 1], w2 = wl[u][tb + 2];
        const T w3 = wl[u][tb + 3], w4 = wl[u][tb + 4], w5 = wl[u][tb + 5];
        const T w6 = wl[u][tb + 6], w7 = wl[u][tb + 7], w8 = wl[u][tb + 8];
        T* __restrict a = acc + static_cast<std::size_t>(u) * planep;
        for (std::ptrdiff_t j = 0; j < n; ++j)
          a[j] += w0 * rm[j - 1] + w1 * rm[j] + w2 * rm[j + 1] + w3 * r0[j - 1] +
                  w4 * r0[j] + w5 * r0[j + 1] + w6 * rp[j - 1] + w7 * rp[j] +
                  w8 * rp[j + 1];
      }
    }
  }
  const std::size_t plane = static_cast<std::size_t>(pin.Y) * pin.Z;
  for (int u = 0; u < NB; ++u)
    for (int y = 0; y < pin.Y; ++y)
      std::copy_n(acc + static_cast<std::size_t>(u) * planep +
                      static_cast<std::size_t>(y + 1) * Zp + 1,
                  pin.Z,
                  out + (static_cast<std::size_t>(co0 + u) * pin.X + x) * plane +
                      static_cast<std::size_t>(y) * pin.Z);
}

template <class T, class WGet>
void conv_same3(const PaddedSlabs<T>& pin, int cin, T* out, int cout, WGet&& wget,
                const T* bias, std::vector<T>& accbuf) {
  accbuf.resize(4 * pin.planep);
  for (int x = 0; x < pin.X; ++x) {
    int co = 0;
    for (; co + 4 <= cout; co += 4)
      conv_plane_block<4>(pin, cin, out, co, x, wget, bias, accbuf.data());
    for (; co < cout; ++co)
      conv_plane_block<1>(pin, cin, out, co, x, wget, bias, accbuf.data());
  }
}

}  // namespace detail

template <class T>
Batch5D<T> conv3d_forward(const Batch5D<T>& x, const ConvLayer<T>& layer) {
  if (x.c != layer.in_ch)
    throw ShapeMismatch("conv3d_forward: input has " + std::to_string(x.c) +
                        " channels, layer expects " + std::to_string(layer.in_ch));
  Batch5D<T> y(x.n, layer.out_ch, x.x, x.y, x.z);
  const auto wget = [&](int oc, int ic, int tap) { return layer.w[layer.widx(oc, ic, tap)]; };
  detail::PaddedSlabs<T> pin;
  pin.reshape(layer.in_ch, x.x, x.y, x.z);
  std::vector<T> accbuf;
  for (int b = 0; b < x.n; ++b) {
    pin.fill(x.slab(b, 0), layer.in_ch);
    detail::conv_same3(pin, layer.in_ch, y.slab(b, 0), layer.out_ch, wget, layer.b.data(),
                       accbuf);
  }
  return y;
}

template <class T>
struct ConvGrads {
  Batch5D<T> gx;
  std::vector<T> gw, gb;
};

template <class T>
ConvGrads<T> conv3d_backward(const Batch5D<T>& x, const ConvLayer<T>& layer,
                             const Batch5D<T>& gy, bool need_gx = true) {
  if (x.c != layer.in_ch || gy.c != layer.out_ch || gy.n != x.n || gy.x != x.x ||
      gy.y != x.y || gy.z != x.z)
    throw ShapeMismatch("conv3d_backward: shapes do not chain");
  ConvGrads<T> g;
  g.gw.assign(layer.w.size(), T(0));
  g.gb.assign(layer.b.size(), T(0));

  detail::PaddedSlabs<T> pin, pgy;
  pin.reshape(layer.in_ch, x.x, x.y, x.z);
  pgy.reshape(layer.out_ch, x.x, x.y, x.z);
  std::vector<T> accbuf;
  if (need_gx) g.gx = Batch5D<T>(x.n, x.c, x.x, x.y, x.z);
  // gradient w.r.t. the input is a same-conv of gy with the transposed,
  // tap-flipped kernel
  const auto wflip = [&](int ci, int oc, int tap) {
    return layer.w[layer.widx(oc, ci, 26 - tap)];
  };

  const std::ptrdiff_t planep = static_cast<std::ptrdiff_t>(pin.planep);
  const std::ptrdiff_t Zp = pin.Zp;
  const std::ptrdiff_t slabp = static_cast<std::ptrdiff_t>(pin.slabp);

  for (int b = 0; b < x.n; ++b) {
    for (int oc = 0; oc < layer.out_ch; ++oc)
      g.gb[oc] += detail::chunked_sum(gy.slab(b, oc), gy.spatial());

    pin.fill(x.slab(b, 0), layer.in_ch);
    pgy.fill(gy.slab(b, 0), layer.out_ch);

    // weight gradient: gy's zero pads cancel every out-of-range term, so each
    // (oc, ic, dx) is nine shifted dot products over one collapsed slab.
    // 16 parallel partial sums per tap keep the loop vectorizable without
    // reassociating a serial reduction; the fold order is fixed, so results
    // stay deterministic.
    for (int oc = 0; oc < layer.out_ch; ++oc) {
      for (int ic = 0; ic < layer.in_ch; ++ic) {
        const T* a = pgy.slab(oc);
        const T* v = pin.slab(ic);
        for (int dx = -1; dx <= 1; ++dx) {
          const T* base = v + static_cast<std::ptrdiff_t>(dx) * planep;
          constexpr std::ptrdiff_t W = 16;
          T t[9][W] = {};
          std::ptrdiff_t j = 0;
          for (; j + W <= slabp; j += W) {
            for (std::ptrdiff_t u = 0; u < W; ++u) {
              const T gv = a[j + u];
              const T* p = base + j + u;
              t[0][u] += gv * p[-Zp - 1];
              t[1][u] += gv * p[-Zp];
              t[2][u] += gv * p[-Zp + 1];
              t[3][u] += gv * p[-1];
              t[4][u] += gv * p[0];
              t[5][u] += gv * p[1];
              t[6][u] += gv * p[Zp - 1];
              t[7][u] += gv * p[Zp];
              t[8][u] += gv * p[Zp + 1];
            }
          }
          for (; j < slabp; ++j) {
            const T gv = a[j];
            const T* p = base + j;
            t[0][0] += gv * p[-Zp - 1];
            t[1][0] += gv * p[-Zp];
            t[2][0] += gv * p[-Zp + 1];
            t[3][0] += gv * p[-1];
            t[4][0] += gv * p[0];
            t[5][0] += gv * p[1];
            t[6][0] += gv * p[Zp - 1];
            t[7][0] += gv * p[Zp];
            t[8][0] += gv * p[Zp + 1];
          }
          const int tb = (dx + 1) * 9;
          for (int k = 0; k < 9; ++k) {
            T s = 0;
            for (std::ptrdiff_t u = 0; u < W; ++u) s += t[k][u];
            g.gw[layer.widx(oc, ic, tb + k)] += s;
          }
        }
      }
    }

    if (need_gx)
      detail::conv_same3(pgy, layer.out_ch, g.gx.slab(b, 0), layer.in_ch, wflip,
                         static_cast<const T*>(nullptr), accbuf);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Batch normalization over (batch, spatial) per channel.
// ---------------------------------------------------------------------------

template <class T>
struct BatchNormLayer {
  int channels = 0;
  std::vector<T> gamma, beta, running_mean, running_var;
  T momentum = T(0.1);
  T epsilon = T(1e-5);

  BatchNormLayer() = default;
  explicit BatchNormLayer(int ch)
      : channels(ch), gamma(ch, T(1)), beta(ch, T(0)), running_mean(ch, T(0)),
        running_var(ch, T(1)) {}
};

template <class T>
struct BnCache {
  std::vector<T> mean, inv_std;  // batch statistics, train mode only
};

namespace detail {

template <class T>
T chunked_centered_sq(const T* a, std::size_t n, T mean) {
  constexpr std::size_t W = 16;
  T acc[W] = {};
  std::size_t i = 0;
  for (; i + W <= n; i += W)
    for (std::size_t u = 0; u < W; ++u) {
      const T d = a[i + u] - mean;
      acc[u] += d * d;
    }
  for (; i < n; ++i) {
    const T d = a[i] - mean;
    acc[0] += d * d;
  }
  T s = 0;
  for (std::size_t u = 0; u < W; ++u) s += acc[u];
  return s;
}

}  // namespace detail

/// Train mode normalizes with batch statistics (population variance) and
/// folds them into the running estimates; infer mode uses the running
/// estimates. Output is gamma * xhat + beta.
template <class T>
Batch5D<T> batchnorm3d_forward(const Batch5D<T>& x, BatchNormLayer<T>& layer, Mode mode,
                               BnCache<T>* cache = nullptr) {
  if (x.c != layer.channels) throw ShapeMismatch("batchnorm3d: channel mismatch");
  const std::size_t sp = x.spatial();
  const std::size_t M = static_cast<std::size_t>(x.n) * sp;
  Batch5D<T> y(x.n, x.c, x.x, x.y, x.z);

  std::vector<T> mean(x.c), inv_std(x.c);
  if (mode == Mode::Train) {
    if (M < 2) throw DegenerateBatch("batchnorm3d: need at least 2 values per channel");
    for (int ch = 0; ch < x.c; ++ch) {
      T sum = 0;
      for (int b = 0; b < x.n; ++b) sum += detail::chunked_sum(x.slab(b, ch), sp);
      const T m = sum / static_cast<T>(M);
      T ss = 0;
      for (int b = 0; b < x.n; ++b) ss += detail::chunked_centered_sq(x.slab(b, ch), sp, m);
      const T var = ss / static_cast<T>(M);
      if (!std::isfinite(static_cast<double>(m)) || !std::isfinite(static_cast<double>(var)))
        throw DegenerateBatch("batchnorm3d: non-finite batch statistics");
      mean[ch] = m;
      inv_std[ch] = T(1) / std::sqrt(var + layer.epsilon);
      layer.running_mean[ch] = (T(1) - layer.momentum) * layer.running_mean[ch] + layer.momentum * m;
      layer.running_var[ch] = (T(1) - layer.momentum) * layer.running_var[ch] + layer.momentum * var;
    }
  } else {
    for (int ch = 0; ch < x.c; ++ch) {
      mean[ch] = layer.running_mean[ch];
      inv_std[ch] = T(1) / std::sqrt(layer.running_var[ch] + layer.epsilon);
    }
  }

  for (int b = 0; b < x.n; ++b)
    for (int ch = 0; ch < x.c; ++ch) {
      const T scale = layer.gamma[ch] * inv_std[ch];
      const T shift = layer.beta[ch] - mean[ch] * scale;
      const T* xi = x.slab(b, ch);
      T* yi = y.slab(b, ch);
      for (std::size_t i = 0; i < sp; ++i) yi[i] = xi[i] * scale + shift;
    }

  if (cache) {
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <class T>
struct BnGrads {
  Batch5D<T> gx;
  std::vector<T> ggamma, gbeta;
};

template <class T>
BnGrads<T> batchnorm3d_backward(const Batch5D<T>& x, const BatchNormLayer<T>& layer,
                                const BnCache<T>& cache, const Batch5D<T>& gy) {
  if (!x.same_shape(gy)) throw ShapeMismatch("batchnorm3d_backward: shape mismatch");
  const std::size_t sp = x.spatial();
  const T M = static_cast<T>(static_cast<std::size_t>(x.n) * sp);
  BnGrads<T> g;
  g.gx = Batch5D<T>(x.n, x.c, x.x, x.y, x.z);
  g.ggamma.assign(x.c, T(0));
  g.gbeta.assign(x.c, T(0));
  for (int ch = 0; ch < x.c; ++ch) {
    const T m = cache.mean[ch], ivs = cache.inv_std[ch];
    T sum_gy = 0, dot_gy_x = 0;
    for (int b = 0; b < x.n; ++b) {
      sum_gy += detail::chunked_sum(gy.slab(b, ch), sp);
      dot_gy_x += detail::chunked_dot(gy.slab(b, ch), x.slab(b, ch), sp);
    }
    const T dgamma = ivs * (dot_gy_x - m * sum_gy);
    g.ggamma[ch] = dgamma;
    g.gbeta[ch] = sum_gy;
    // dx = A*gy + B*x + C with the batch-statistic terms folded in
    const T A = layer.gamma[ch] * ivs;
    const T B = -A * ivs * dgamma / M;
    const T C = -A * sum_gy / M - B * m;
    for (int b = 0; b < x.n; ++b) {
      const T* gi = gy.slab(b, ch);
      const T* xi = x.slab(b, ch);
      T* oi = g.gx.slab(b, ch);
      for (std::size_t i = 0; i < sp; ++i) oi[i] = A * gi[i] + B * xi[i] + C;
    }
  }
  return g;
}

/// Backward through infer-mode normalization (running statistics constant).
template <class T>
Batch5D<T> batchnorm3d_backward_infer(const BatchNormLayer<T>& layer, const Batch5D<T>& gy) {
  Batch5D<T> gx(gy.n, gy.c, gy.x, gy.y, gy.z);
  const std::size_t sp = gy.spatial();
  for (int b = 0; b < gy.n; ++b)
    for (int ch = 0; ch < gy.c; ++ch) {
      const T a = layer.gamma[ch] / std::sqrt(layer.running_var[ch] + layer.epsilon);
      const T* gi = gy.slab(b, ch);
      T* oi = gx.slab(b, ch);
      for (std::size_t i = 0; i < sp; ++i) oi[i] = a * gi[i];
    }
  return gx;
}

// ---------------------------------------------------------------------------
// Pooling: non-overlapping cubic windows, stride == size, floor division with
// trailing partial windows dropped. An axis shorter than the window keeps one
// window clipped to the axis, so deep chains on small inputs stay well formed.
// ---------------------------------------------------------------------------

inline int pooled_dim(int n, int size) { return std::max(1, n / size); }

template <class T>
struct PoolCache {
  PoolKind kind = PoolKind::Max;
  int size = 2;
  int in_x = 0, in_y = 0, in_z = 0;
  int n = 0, c = 0;
  std::vector<std::int32_t> argmax;  // flat offset into the input slab, Max only
};

template <class T>
Batch5D<T> pool3d_forward(const Batch5D<T>& x, int size, PoolKind kind = PoolKind::Max,
                          PoolCache<T>* cache = nullptr) {
  if (size < 1) throw InvalidSpec("pool3d: window size must be >= 1");
  const int ox = pooled_dim(x.x, size), oy = pooled_dim(x.y, size), oz = pooled_dim(x.z, size);
  Batch5D<T> y(x.n, x.c, ox, oy, oz);
  if (cache) {
    cache->kind = kind;
    cache->size = size;
    cache->in_x = x.x;
    cache->in_y = x.y;
    cache->in_z = x.z;
    cache->n = x.n;
    cache->c = x.c;
    if (kind == PoolKind::Max) cache->argmax.assign(y.size(), 0);
  }
  const std::size_t plane = static_cast<std::size_t>(x.y) * x.z;
  std::size_t oidx = 0;
  for (int b = 0; b < x.n; ++b)
    for (int ch = 0; ch < x.c; ++ch) {
      const T* slab = x.slab(b, ch);
      for (int i = 0; i < ox; ++i) {
        const int xi0 = i * size, xi1 = std::min(xi0 + size, x.x);
        for (int j = 0; j < oy; ++j) {
          const int yi0 = j * size, yi1 = std::min(yi0 + size, x.y);
          for (int k = 0; k < oz; ++k, ++oidx) {
            const int zi0 = k * size, zi1 = std::min(zi0 + size, x.z);
            if (kind == PoolKind::Max) {
              T best = slab[static_cast<std::size_t>(xi0) * plane +
                            static_cast<std::size_t>(yi0) * x.z + zi0];
              std::size_t barg = static_cast<std::size_t>(xi0) * plane +
                                 static_cast<std::size_t>(yi0) * x.z + zi0;
              for (int xi = xi0; xi < xi1; ++xi)
                for (int yi = yi0; yi < yi1; ++yi)
                  for (int zi = zi0; zi < zi1; ++zi) {
                    const std::size_t off = static_cast<std::size_t>(xi) * plane +
                                            static_cast<std::size_t>(yi) * x.z + zi;
                    if (slab[off] > best) {  // first max wins ties
                      best = slab[off];
                      barg = off;
                    }
                  }
              y.data[oidx] = best;
              if (cache) cache->argmax[oidx] = static_cast<std::int32_t>(barg);
            } else {
              T sum = 0;
              int cnt = 0;
              for (int xi = xi0; xi < xi1; ++xi)
                for (int yi = yi0; yi < yi1; ++yi)
                  for (int zi = zi0; zi < zi1; ++zi) {
                    sum += slab[static_cast<std::size_t>(xi) * plane +
                                static_cast<std::size_t>(yi) * x.z + zi];
                    ++cnt;
                  }
              y.data[oidx] = sum / static_cast<T>(cnt);
            }
          }
        }
      }
    }
  return y;
}

template <class T>
Batch5D<T> maxpool3d_forward(const Batch5D<T>& x, int size, PoolCache<T>* cache = nullptr) {
  return pool3d_forward(x, size, PoolKind::Max, cache);
}

template <class T>
Batch5D<T> pool3d_backward(const PoolCache<T>& cache, const Batch5D<T>& gy) {
  Batch5D<T> gx(cache.n, cache.c, cache.in_x, cache.in_y, cache.in_z);
  const int size = cache.size;
  const int ox = pooled_dim(cache.in_x, size), oy = pooled_dim(cache.in_y, size),
            oz = pooled_dim(cache.in_z, size);
  if (gy.n != cache.n || gy.c != cache.c || gy.x != ox || gy.y != oy || gy.z != oz)
    throw ShapeMismatch("pool3d_backward: gradient shape mismatch");
  const std::size_t plane = static_cast<std::size_t>(cache.in_y) * cache.in_z;
  std::size_t oidx = 0;
  for (int b = 0; b < cache.n; ++b)
    for (int ch = 0; ch < cache.c; ++ch) {
      T* slab = gx.slab(b, ch);
      for (int i = 0; i < ox; ++i) {
        const int xi0 = i * size, xi1 = std::min(xi0 + size, cache.in_x);
        for (int j = 0; j < oy; ++j) {
          const int yi0 = j * size, yi1 = std::min(yi0 + size, cache.in_y);
          for (int k = 0; k < oz; ++k, ++oidx) {
            const int zi0 = k * size, zi1 = std::min(zi0 + size, cache.in_z);
            if (cache.kind == PoolKind::Max) {
              slab[cache.argmax[oidx]] += gy.data[oidx];
            } else {
              const int cnt = (xi1 - xi0) * (yi1 - yi0) * (zi1 - zi0);
              const T share = gy.data[oidx] / static_cast<T>(cnt);
              for (int xi = xi0; xi < xi1; ++xi)
                for (int yi = yi0; yi < yi1; ++yi)
                  for (int zi = zi0; zi < zi1; ++zi)
                    slab[static_cast<std::size_t>(xi) * plane +
                         static_cast<std::size_t>(yi) * cache.in_z + zi] += share;
            }
          }
        }
      }
    }
  return gx;
}

// ---------------------------------------------------------------------------
// Activation
// ---------------------------------------------------------------------------

template <class T>
Batch5D<T> activation_forward(const Batch5D<T>& x, Activation act) {
  Batch5D<T> y(x.n, x.c, x.x, x.y, x.z);
  if (act == Activation::ReLU) {
    for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
  } else {
    for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = std::tanh(x.data[i]);
  }
  return y;
}

/// Backward from the activation OUTPUT (both supported activations allow it).
template <class T>
Batch5D<T> activation_backward(const Batch5D<T>& y, const Batch5D<T>& gy, Activation act) {
  if (!y.same_shape(gy)) throw ShapeMismatch("activation_backward: shape mismatch");
  Batch5D<T> gx(y.n, y.c, y.x, y.y, y.z);
  if (act == Activation::ReLU) {
    for (std::size_t i = 0; i < y.data.size(); ++i)
      gx.data[i] = y.data[i] > T(0) ? gy.data[i] : T(0);
  } else {
    for (std::size_t i = 0; i < y.data.size(); ++i)
      gx.data[i] = gy.data[i] * (T(1) - y.data[i] * y.data[i]);
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Fully connected
// ---------------------------------------------------------------------------

template <class T>
struct FcLayer {
  int in_features = 0, out_features = 0;
  std::vector<T> w;  // (out, in) row-major
  std::vector<T> b;  // out

  FcLayer() = default;
  FcLayer(int in, int out)
      : in_features(in), out_features(out), w(static_cast<std::size_t>(out) * in), b(out) {}
};

template <class T>
Mat<T> fc_forward(const Mat<T>& x, const FcLayer<T>& layer) {
  if (x.cols != layer.in_features)
    throw ShapeMismatch("fc_forward: feature length " + std::to_string(x.cols) +
                        " does not match weight rows " + std::to_string(layer.in_features));
  Mat<T> y(x.rows, layer.out_features);
  for (int r = 0; r < x.rows; ++r)
    for (int o = 0; o < layer.out_features; ++o)
      y.at(r, o) = layer.b[o] + detail::chunked_dot(x.row(r),
                                                    layer.w.data() +
                                                        static_cast<std::size_t>(o) *
                                                            layer.in_features,
                                                    static_cast<std::size_t>(x.cols));
  return y;
}

template <class T>
struct FcGrads {
  Mat<T> gx;
  std::vector<T> gw, gb;
};

template <class T>
FcGrads<T> fc_backward(const Mat<T>& x, const FcLayer<T>& layer, const Mat<T>& gy) {
  if (gy.rows != x.rows || gy.cols != layer.out_features || x.cols != layer.in_features)
    throw ShapeMismatch("fc_backward: shapes do not chain");
  FcGrads<T> g;
  g.gx = Mat<T>(x.rows, x.cols);
  g.gw.assign(layer.w.size(), T(0));
  g.gb.assign(layer.b.size(), T(0));
  for (int r = 0; r < x.rows; ++r) {
    const T* xr = x.row(r);
    const T* gr = gy.row(r);
    T* gxr = g.gx.row(r);
    for (int o = 0; o < layer.out_features; ++o) {
      const T go = gr[o];
      g.gb[o] += go;
      T* gwr = g.gw.data() + static_cast<std::size_t>(o) * layer.in_features;
      const T* wr = layer.w.data() + static_cast<std::size_t>(o) * layer.in_features;
      for (int i = 0; i < x.cols; ++i) {
        gwr[i] += go * xr[i];
        gxr[i] += go * wr[i];
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Dropout (inverted: survivors scaled by 1/(1-p) at train time)
// ---------------------------------------------------------------------------

template <class T>
struct DropoutCache {
  std::vector<std::uint8_t> mask;  // empty means identity
  T scale = T(1);
};

template <class T>
Mat<T> dropout_forward(const Mat<T>& x, double p, Mode mode, SeededRng* rng,
                       DropoutCache<T>* cache = nullptr) {
  if (p < 0.0 || p >= 1.0) throw InvalidSpec("dropout: p must be in [0, 1)");
  if (cache) {
    cache->mask.clear();
    cache->scale = T(1);
  }
  if (p == 0.0 || mode == Mode::Infer) return x;  // bit-identical passthrough, no draws
  if (!rng) throw InvalidSpec("dropout: train mode with p > 0 requires an rng");
  Mat<T> y(x.rows, x.cols);
  const T scale = T(1.0 / (1.0 - p));
  std::vector<std::uint8_t> mask(x.data.size());
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const bool keep = rng->uniform() >= p;
    mask[i] = keep ? 1 : 0;
    y.data[i] = keep ? x.data[i] * scale : T(0);
  }
  if (cache) {
    cache->mask = std::move(mask);
    cache->scale = scale;
  }
  return y;
}

template <class T>
Mat<T> dropout_backward(const Mat<T>& gy, const DropoutCache<T>& cache) {
  if (cache.mask.empty()) return gy;
  Mat<T> gx(gy.rows, gy.cols);
  for (std::size_t i = 0; i < gy.data.size(); ++i)
    gx.data[i] = cache.mask[i] ? gy.data[i] * cache.scale : T(0);
  return gx;
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy, log-sum-exp form
// ---------------------------------------------------------------------------

template <class T>
std::vector<T> softmax_probs(const T* logits, int count) {
  T m = logits[0];
  for (int i = 1; i < count; ++i) m = std::max(m, logits[i]);
  std::vector<T> p(count);
  T den = 0;
  for (int i = 0; i < count; ++i) {
    p[i] = std::exp(logits[i] - m);
    den += p[i];
  }
  for (int i = 0; i < count; ++i) p[i] /= den;
  return p;
}

/// Per-sample loss and gradient: loss = -log softmax(logits)[label],
/// grad = softmax - one_hot(label).
template <class T>
std::pair<T, std::vector<T>> softmax_crossentropy(const T* logits, int count, int label) {
  T m = logits[0];
  for (int i = 1; i < count; ++i) m = std::max(m, logits[i]);
  T den = 0;
  for (int i = 0; i < count; ++i) den += std::exp(logits[i] - m);
  const T loss = std::log(den) - (logits[label] - m);
  std::vector<T> grad(count);
  for (int i = 0; i < count; ++i) grad[i] = std::exp(logits[i] - m) / den;
  grad[label] -= T(1);
  return {loss, std::move(grad)};
}

/// Mean loss over the batch; gradient rows are already divided by the batch
/// size so they chain directly into backward passes.
template <class T>
std::pair<T, Mat<T>> softmax_crossentropy_batch(const Mat<T>& logits,
                                                const std::vector<int>& labels) {
  if (static_cast<int>(labels.size()) != logits.rows)
    throw LengthMismatch("softmax_crossentropy_batch: labels do not match logits rows");
  Mat<T> grad(logits.rows, logits.cols);
  T total = 0;
  const T inv_n = T(1) / static_cast<T>(logits.rows);
  for (int r = 0; r < logits.rows; ++r) {
    auto [loss, g] = softmax_crossentropy(logits.row(r), logits.cols, labels[r]);
    total += loss;
    for (int c = 0; c < logits.cols; ++c) grad.at(r, c) = g[c] * inv_n;
  }
  return {total * inv_n, std::move(grad)};
}

}  // namespace voxkit
