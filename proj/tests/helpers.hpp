#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "voxkit/rng.hpp"
#include "voxkit/volume.hpp"

namespace testutil {

/// Self-deleting scratch directory for file-format tests.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "voxkit-test-XXXXXX").string();
    std::vector<char> buf(tmpl.begin(), tmpl.end());
    buf.push_back('\0');
    if (!::mkdtemp(buf.data())) throw std::runtime_error("mkdtemp failed");
    path_ = buf.data();
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::string& path() const { return path_; }
  std::string file(const std::string& name) const { return path_ + "/" + name; }

 private:
  std::string path_;
};

template <class T>
void fill_uniform(std::vector<T>& v, voxkit::SeededRng& rng, double lo = -1.0, double hi = 1.0) {
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
}

template <class T>
voxkit::Volume3D<T> random_volume(int nx, int ny, int nz, voxkit::SeededRng& rng, double lo = 0.1,
                                  double hi = 1.0) {
  voxkit::Volume3D<T> v(nx, ny, nz);
  fill_uniform(v.data, rng, lo, hi);
  return v;
}

}  // namespace testutil
