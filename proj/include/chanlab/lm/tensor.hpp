#pragma once

#include <Eigen/Core>

#include <span>
#include <string>

namespace chanlab::lm {

// Row-major so that a row is one token's vector.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;

// A named, flat view over one parameter tensor.
struct TensorView {
  std::string name;
  std::span<double> values;
};

struct ConstTensorView {
  std::string name;
  std::span<const double> values;
};

inline std::span<double> flat(Matrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
inline std::span<const double> flat(const Matrix& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}
inline std::span<double> flat(RowVector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
inline std::span<const double> flat(const RowVector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace chanlab::lm
