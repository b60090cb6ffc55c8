#pragma once

#include <cstring>
#include <filesystem>
#include <random>
#include <string>

#include "rsmg/nn.hpp"

namespace rsmg::test {

/// Uniform [-1, 1] values.
inline Tensor random_tensor(Shape shape, Rng& rng) { return uniform(std::move(shape), 1.0f, rng); }

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, double(std::abs(a.data()[i] - b.data()[i])));
  return m;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0;
}

inline std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("rsmg_test_" + name)).string();
}

}  // namespace rsmg::test
