#pragma once

// Central finite differences of the batch loss, evaluated with forward
// passes only. Independent of the reverse-mode implementation.

#include <chanlab/lm/gradients.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace chanlab::testing {

inline double central_difference(double& coordinate, const std::function<double()>& loss,
                                 double step = 1e-4) {
  const double saved = coordinate;
  coordinate = saved + step;
  const double up = loss();
  coordinate = saved - step;
  const double down = loss();
  coordinate = saved;
  return (up - down) / (2.0 * step);
}

// |a - b| / max(|a|, |b|, floor). The floor keeps coordinates whose true
// gradient is numerically zero from dividing noise by noise.
inline double relative_error(double a, double b, double floor = 1e-7) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

struct Coordinate {
  std::span<double> tensor;
  std::span<const double> gradient;
  std::size_t index;
};

// Picks `count` coordinates uniformly over the concatenation of `tensors`.
inline std::vector<std::size_t> sample_indices(std::size_t total, std::size_t count,
                                               std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(pick(rng));
  }
  return out;
}

}  // namespace chanlab::testing
