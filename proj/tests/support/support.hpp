#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hisem/ops.hpp"
#include "hisem/params.hpp"
#include "hisem/tensor.hpp"

namespace hisem::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, Real stddev = 1.0) {
  std::vector<Real> v(numel_of(shape));
  for (auto& x : v) x = stddev * rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

inline std::vector<Real> to_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

/// sum(out * w): a scalar whose gradient reaches every output coordinate
/// with a distinct weight, so a wrong partial cannot hide behind symmetry.
inline Tensor weighted_sum(const Tensor& out, const Tensor& w) { return sum(mul(out, w)); }

inline Real max_abs_diff(std::span<const Real> a, std::span<const Real> b) {
  Real m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

inline Real max_abs(std::span<const Real> a) {
  Real m = 0.0;
  for (Real x : a) m = std::max(m, std::fabs(x));
  return m;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            ("hisem_" + tag + "_" + std::to_string(stamp) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace hisem::testing
