#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "voxkit/common.hpp"

namespace voxkit {

/// Dense 3D scalar field. Axis convention: x = sagittal index, y = coronal
/// index, z = axial index; storage is row-major in (x, y, z) with z varying
/// fastest. The same order is used on disk.
template <class T>
struct Volume3D {
  int nx = 0, ny = 0, nz = 0;
  std::vector<T> data;
  /// Set by normalize_intensity when the nonzero voxels had zero spread.
  bool degenerate_norm = false;

  Volume3D() = default;
  Volume3D(int nx_, int ny_, int nz_, T fill = T(0))
      : nx(nx_), ny(ny_), nz(nz_), data(static_cast<std::size_t>(nx_) * ny_ * nz_, fill) {}

  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * ny + j) * nz + k;
  }
  T& at(int i, int j, int k) { return data[index(i, j, k)]; }
  const T& at(int i, int j, int k) const { return data[index(i, j, k)]; }
  std::size_t size() const { return data.size(); }

  bool same_dims(const Volume3D& o) const { return nx == o.nx && ny == o.ny && nz == o.nz; }

  bool all_finite() const {
    for (const T& v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  std::array<double, 3> center() const {
    return {(nx - 1) / 2.0, (ny - 1) / 2.0, (nz - 1) / 2.0};
  }

  template <class U>
  Volume3D<U> cast() const {
    Volume3D<U> out(nx, ny, nz);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    out.degenerate_norm = degenerate_norm;
    return out;
  }
};

using VolumeF = Volume3D<float>;
using VolumeD = Volume3D<double>;

/// Linear map plus translation, with the linear part acting about `center`:
///   y = L (x - center) + center + translation     (voxel coordinates)
struct AffineTransform {
  std::array<double, 9> linear = {1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major 3x3
  std::array<double, 3> translation = {0, 0, 0};
  std::array<double, 3> center = {0, 0, 0};

  static AffineTransform identity(std::array<double, 3> c = {0, 0, 0}) {
    AffineTransform t;
    t.center = c;
    return t;
  }

  std::array<double, 3> apply(const std::array<double, 3>& p) const {
    std::array<double, 3> d = {p[0] - center[0], p[1] - center[1], p[2] - center[2]};
    return {linear[0] * d[0] + linear[1] * d[1] + linear[2] * d[2] + center[0] + translation[0],
            linear[3] * d[0] + linear[4] * d[1] + linear[5] * d[2] + center[1] + translation[1],
            linear[6] * d[0] + linear[7] * d[1] + linear[8] * d[2] + center[2] + translation[2]};
  }

  double det() const {
    const auto& m = linear;
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }

  /// Inverse map as another AffineTransform (same center). Throws
  /// SingularTransform when the linear part is not invertible.
  AffineTransform inverse() const {
    const double d = det();
    if (std::abs(d) < 1e-9) throw SingularTransform("affine transform is not invertible");
    const auto& m = linear;
    AffineTransform inv;
    inv.center = center;
    inv.linear = {(m[4] * m[8] - m[5] * m[7]) / d, (m[2] * m[7] - m[1] * m[8]) / d,
                  (m[1] * m[5] - m[2] * m[4]) / d, (m[5] * m[6] - m[3] * m[8]) / d,
                  (m[0] * m[8] - m[2] * m[6]) / d, (m[2] * m[3] - m[0] * m[5]) / d,
                  (m[3] * m[7] - m[4] * m[6]) / d, (m[1] * m[6] - m[0] * m[7]) / d,
                  (m[0] * m[4] - m[1] * m[3]) / d};
    // (L^-1 acting about the same center) composed with undoing the shift:
    // x = L^-1 (y - center - translation) + center
    //   = L^-1 ((y - center) - translation) + center
    const auto& n = inv.linear;
    inv.translation = {-(n[0] * translation[0] + n[1] * translation[1] + n[2] * translation[2]),
                       -(n[3] * translation[0] + n[4] * translation[1] + n[5] * translation[2]),
                       -(n[6] * translation[0] + n[7] * translation[1] + n[8] * translation[2])};
    return inv;
  }

  /// this ∘ other (apply `other` first). Both must share the same center.
  AffineTransform compose(const AffineTransform& other) const {
    AffineTransform r;
    r.center = center;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0;
        for (int k = 0; k < 3; ++k) s += linear[3 * i + k] * other.linear[3 * k + j];
        r.linear[3 * i + j] = s;
      }
    for (int i = 0; i < 3; ++i) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += linear[3 * i + k] * other.translation[k];
      r.translation[i] = s + translation[i];
    }
    return r;
  }
};

enum class Border { Zero, Clamp };

namespace detail {

template <class T>
double corner_value(const Volume3D<T>& vol, int i, int j, int k, Border border) {
  if (border == Border::Clamp) {
    i = std::clamp(i, 0, vol.nx - 1);
    j = std::clamp(j, 0, vol.ny - 1);
    k = std::clamp(k, 0, vol.nz - 1);
    return static_cast<double>(vol.at(i, j, k));
  }
  if (i < 0 || j < 0 || k < 0 || i >= vol.nx || j >= vol.ny || k >= vol.nz) return 0.0;
  return static_cast<double>(vol.at(i, j, k));
}

inline double lerp(double a, double b, double t) { return a + t * (b - a); }

// Nested-lerp form: exact at integer coordinates and exact for equal corner
// values, which the bit-identity invariants rely on.
template <class T>
double sample_impl(const Volume3D<T>& vol, double x, double y, double z, Border border) {
  const double fx = std::floor(x), fy = std::floor(y), fz = std::floor(z);
  const int i0 = static_cast<int>(fx), j0 = static_cast<int>(fy), k0 = static_cast<int>(fz);
  const double tx = x - fx, ty = y - fy, tz = z - fz;
  const double c00 = lerp(corner_value(vol, i0, j0, k0, border),
                          corner_value(vol, i0, j0, k0 + 1, border), tz);
  const double c01 = lerp(corner_value(vol, i0, j0 + 1, k0, border),
                          corner_value(vol, i0, j0 + 1, k0 + 1, border), tz);
  const double c10 = lerp(corner_value(vol, i0 + 1, j0, k0, border),
                          corner_value(vol, i0 + 1, j0, k0 + 1, border), tz);
  const double c11 = lerp(corner_value(vol, i0 + 1, j0 + 1, k0, border),
                          corner_value(vol, i0 + 1, j0 + 1, k0 + 1, border), tz);
  return lerp(lerp(c00, c01, ty), lerp(c10, c11, ty), tx);
}

}  // namespace detail

/// Trilinear interpolation of the 8 surrounding voxels. Corner reads outside
/// [0, n-1] contribute 0.
template <class T>
double trilinear_sample(const Volume3D<T>& vol, double x, double y, double z) {
  return detail::sample_impl(vol, x, y, z, Border::Zero);
}

template <class T>
double trilinear_sample(const Volume3D<T>& vol, const std::array<double, 3>& p) {
  return trilinear_sample(vol, p[0], p[1], p[2]);
}

/// Inverse-mapped affine warp: output voxel q holds the trilinear sample of
/// the input at t^-1(q), with zero fill outside the input grid.
template <class T>
Volume3D<T> warp_affine(const Volume3D<T>& vol, const AffineTransform& t, int onx, int ony,
                        int onz) {
  if (onx <= 0 || ony <= 0 || onz <= 0) throw InvalidSpec("warp_affine: output dims must be positive");
  const AffineTransform inv = t.inverse();
  Volume3D<T> out(onx, ony, onz);
  std::size_t idx = 0;
  for (int i = 0; i < onx; ++i)
    for (int j = 0; j < ony; ++j)
      for (int k = 0; k < onz; ++k, ++idx) {
        const auto p = inv.apply({static_cast<double>(i), static_cast<double>(j),
                                  static_cast<double>(k)});
        out.data[idx] =
            static_cast<T>(detail::sample_impl(vol, p[0], p[1], p[2], Border::Zero));
      }
  return out;
}

template <class T>
Volume3D<T> warp_affine(const Volume3D<T>& vol, const AffineTransform& t) {
  return warp_affine(vol, t, vol.nx, vol.ny, vol.nz);
}

/// Origin-aligned scaling resample: output voxel q reads the input at
/// q * (n/m) per axis. Corner reads are edge-clamped so constant volumes stay
/// constant for any target, including upsampling.
template <class T>
Volume3D<T> resize(const Volume3D<T>& vol, int tnx, int tny, int tnz) {
  if (tnx <= 0 || tny <= 0 || tnz <= 0) throw InvalidSpec("resize: target dims must be positive");
  const double sx = static_cast<double>(vol.nx) / tnx;
  const double sy = static_cast<double>(vol.ny) / tny;
  const double sz = static_cast<double>(vol.nz) / tnz;
  Volume3D<T> out(tnx, tny, tnz);
  std::size_t idx = 0;
  for (int i = 0; i < tnx; ++i)
    for (int j = 0; j < tny; ++j)
      for (int k = 0; k < tnz; ++k, ++idx) {
        out.data[idx] = static_cast<T>(
            detail::sample_impl(vol, i * sx, j * sy, k * sz, Border::Clamp));
      }
  return out;
}

struct NormalizeOptions {
  bool rescale_variance = true;  // divide by the nonzero-voxel std, not just center
};

/// Center (and by default rescale) intensities using statistics over the
/// strictly nonzero voxels; zero voxels stay exactly 0. A zero-spread volume
/// maps its nonzero voxels to 0 and sets degenerate_norm.
template <class T>
Volume3D<T> normalize_intensity(const Volume3D<T>& vol, NormalizeOptions opt = {}) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const T& v : vol.data)
    if (v != T(0)) {
      sum += static_cast<double>(v);
      ++n;
    }
  if (n == 0) throw AllZeroVolume("normalize_intensity: volume has no nonzero voxel");
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (const T& v : vol.data)
    if (v != T(0)) {
      const double d = static_cast<double>(v) - mean;
      ss += d * d;
    }
  const double sd = std::sqrt(ss / static_cast<double>(n));

  Volume3D<T> out(vol.nx, vol.ny, vol.nz);
  // Relative guard: all-equal voxels can leave sd at rounding level, which
  // must count as degenerate rather than amplify noise.
  const bool degenerate = sd <= std::abs(mean) * 1e-12 + 1e-300;
  if (degenerate) {
    out.degenerate_norm = true;
    return out;  // nonzero voxels -> 0, zeros stay 0
  }
  for (std::size_t i = 0; i < vol.data.size(); ++i) {
    const T v = vol.data[i];
    if (v != T(0)) {
      double num = static_cast<double>(v) - mean;
      out.data[i] = static_cast<T>(opt.rescale_variance ? num / sd : num);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Volume container file: "VOX3" magic, u32 version, u32 dims (nx, ny, nz),
// then nx*ny*nz little-endian 32-bit floats in (x, y, z) order, z fastest.
// A plain-text sidecar at <path>.meta carries provenance.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kVolumeMagic = 0x33584F56;  // "VOX3"
inline constexpr std::uint32_t kVolumeVersion = 1;

struct VolumeMeta {
  std::string source_id;
  std::vector<std::string> steps;  // preprocessing steps applied, in order
};

template <class T>
void save_volume(const std::string& path, const Volume3D<T>& vol, const VolumeMeta* meta = nullptr) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  put_u32(os, kVolumeMagic);
  put_u32(os, kVolumeVersion);
  put_u32(os, static_cast<std::uint32_t>(vol.nx));
  put_u32(os, static_cast<std::uint32_t>(vol.ny));
  put_u32(os, static_cast<std::uint32_t>(vol.nz));
  std::vector<unsigned char> buf(vol.data.size() * 4);
  for (std::size_t i = 0; i < vol.data.size(); ++i) {
    const float f = static_cast<float>(vol.data[i]);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    buf[4 * i] = static_cast<unsigned char>(bits);
    buf[4 * i + 1] = static_cast<unsigned char>(bits >> 8);
    buf[4 * i + 2] = static_cast<unsigned char>(bits >> 16);
    buf[4 * i + 3] = static_cast<unsigned char>(bits >> 24);
  }
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!os) throw IoError("write failed: " + path);
  if (meta) {
    std::ofstream ms(path + ".meta");
    ms << "source_id=" << meta->source_id << "\n";
    ms << "axis_order=x:sagittal y:coronal z:axial (z fastest)\n";
    for (const auto& s : meta->steps) ms << "step=" << s << "\n";
  }
}

inline VolumeF load_volume(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingFile("cannot open volume file: " + path);
  if (get_u32(is) != kVolumeMagic) throw ParseError("bad magic in volume file: " + path);
  const std::uint32_t version = get_u32(is);
  if (version != kVolumeVersion)
    throw ParseError("unsupported volume format version in " + path);
  const std::uint32_t nx = get_u32(is), ny = get_u32(is), nz = get_u32(is);
  if (nx == 0 || ny == 0 || nz == 0 || static_cast<std::uint64_t>(nx) * ny * nz > (1ull << 31))
    throw ParseError("implausible dims in volume file: " + path);
  VolumeF vol(static_cast<int>(nx), static_cast<int>(ny), static_cast<int>(nz));
  std::vector<unsigned char> buf(vol.data.size() * 4);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!is) throw ParseError("truncated volume file: " + path);
  for (std::size_t i = 0; i < vol.data.size(); ++i) {
    const std::uint32_t bits = static_cast<std::uint32_t>(buf[4 * i]) |
                               (static_cast<std::uint32_t>(buf[4 * i + 1]) << 8) |
                               (static_cast<std::uint32_t>(buf[4 * i + 2]) << 16) |
                               (static_cast<std::uint32_t>(buf[4 * i + 3]) << 24);
    std::memcpy(&vol.data[i], &bits, 4);
  }
  if (!vol.all_finite()) throw ParseError("non-finite voxel in volume file: " + path);
  return vol;
}

}  // namespace voxkit
