#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "voxkit/common.hpp"
#include "voxkit/volume.hpp"

namespace voxkit {

/// Batched activation tensor, shape (batch, channels, x, y, z), row-major
/// with z fastest. Same spatial axis convention as Volume3D.
template <class T>
struct Batch5D {
  int n = 0, c = 0, x = 0, y = 0, z = 0;
  std::vector<T> data;

  Batch5D() = default;
  Batch5D(int n_, int c_, int x_, int y_, int z_, T fill = T(0))
      : n(n_), c(c_), x(x_), y(y_), z(z_),
        data(static_cast<std::size_t>(n_) * c_ * x_ * y_ * z_, fill) {}

  std::size_t spatial() const { return static_cast<std::size_t>(x) * y * z; }
  std::size_t size() const { return data.size(); }

  std::size_t index(int b, int ch, int i, int j, int k) const {
    return (((static_cast<std::size_t>(b) * c + ch) * x + i) * y + j) * z + k;
  }
  T& at(int b, int ch, int i, int j, int k) { return data[index(b, ch, i, j, k)]; }
  const T& at(int b, int ch, int i, int j, int k) const { return data[index(b, ch, i, j, k)]; }

  T* slab(int b, int ch) { return data.data() + (static_cast<std::size_t>(b) * c + ch) * spatial(); }
  const T* slab(int b, int ch) const {
    return data.data() + (static_cast<std::size_t>(b) * c + ch) * spatial();
  }

  bool same_shape(const Batch5D& o) const {
    return n == o.n && c == o.c && x == o.x && y == o.y && z == o.z;
  }

  bool all_finite() const {
    for (const T& v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  /// Copy one volume into sample slot b, channel 0. Dims must match.
  void load_sample(int b, const Volume3D<T>& vol) {
    if (vol.nx != x || vol.ny != y || vol.nz != z)
      throw ShapeMismatch("load_sample: volume dims do not match batch spatial dims");
    std::copy(vol.data.begin(), vol.data.end(), slab(b, 0));
  }
};

/// Dense row-major matrix; used for flattened features, logits and embeddings.
template <class T>
struct Mat {
  int rows = 0, cols = 0;
  std::vector<T> data;

  Mat() = default;
  Mat(int r, int c, T fill = T(0)) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  T& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  const T& at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  T* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  const T* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
};

namespace detail {

// Chunked accumulation: vectorizable without FP reassociation flags, and the
// summation order is fixed for any input, which keeps runs bit-reproducible.
template <class T>
T chunked_sum(const T* a, std::size_t n) {
  constexpr std::size_t W = 16;
  T acc[W] = {};
  std::size_t i = 0;
  for (; i + W <= n; i += W)
    for (std::size_t u = 0; u < W; ++u) acc[u] += a[i + u];
  for (; i < n; ++i) acc[0] += a[i];
  T s = 0;
  for (std::size_t u = 0; u < W; ++u) s += acc[u];
  return s;
}

template <class T>
T chunked_dot(const T* a, const T* b, std::size_t n) {
  constexpr std::size_t W = 16;
  T acc[W] = {};
  std::size_t i = 0;
  for (; i + W <= n; i += W)
    for (std::size_t u = 0; u < W; ++u) acc[u] += a[i + u] * b[i + u];
  for (; i < n; ++i) acc[0] += a[i] * b[i];
  T s = 0;
  for (std::size_t u = 0; u < W; ++u) s += acc[u];
  return s;
}

template <class T>
T chunked_sum_sq(const T* a, std::size_t n) {
  return chunked_dot(a, a, n);
}

}  // namespace detail

}  // namespace voxkit
