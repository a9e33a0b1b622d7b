#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include "deblur/rng.hpp"
#include "deblur/tensor.hpp"

namespace testutil {

inline deblur::Tensor<double> random_tensor(deblur::Shape s, std::uint64_t seed, double lo = -1.0,
                                            double hi = 1.0) {
  deblur::Tensor<double> t(s);
  deblur::Rng rng(seed);
  for (double& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("deblur_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline double max_abs_diff(const deblur::Tensor<double>& a, const deblur::Tensor<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace testutil
