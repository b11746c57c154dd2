#pragma once

#include <unistd.h>

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "futr/common.hpp"
#include "futr/tensor.hpp"

namespace testutil {

// Scratch directory under the system temp root, removed on scope exit.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("futr_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string str() const { return path.string(); }
};

template <typename Real>
futr::Tensor<Real> random_tensor(futr::Shape shape, futr::Rng& rng,
                                 double lo = -1.0, double hi = 1.0,
                                 bool needs_grad = false) {
  auto t = futr::Tensor<Real>::zeros(std::move(shape), needs_grad);
  for (auto& v : t.values()) v = static_cast<Real>(rng.uniform(lo, hi));
  return t;
}

inline bool bits_equal(const std::vector<double>& a,
                       const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::memcmp(&a[i], &b[i], sizeof(double)) != 0) return false;
  return true;
}

inline bool bits_equal(const std::vector<float>& a,
                       const std::vector<float>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::memcmp(&a[i], &b[i], sizeof(float)) != 0) return false;
  return true;
}

}  // namespace testutil
