#pragma once

#include <concepts>

#include "clens/math/tensor.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace clens {

template <typename DerivedA, typename DerivedB>
auto matmul(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                                std::to_string(b.rows()) + " differ");
  }
  using Scalar = typename DerivedA::Scalar;
  Matrix<Scalar> out = a * b;
  return out;
}

// Max-subtracted softmax of each row.
template <typename Derived>
Matrix<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar peak = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - peak).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

enum class Axis { rows = 0, cols = 1 };

// softmax along `axis`: Axis::cols normalises each row, Axis::rows each column.
template <typename Derived>
Matrix<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& x, Axis axis) {
  if (axis == Axis::cols) return softmax_rows(x);
  return softmax_rows(x.transpose()).transpose();
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, int axis = -1) {
  if (x.rank() == 1) {
    Matrix<Scalar> row = x.data().transpose();
    return Tensor<Scalar>(x.shape(), softmax_rows(row).transpose());
  }
  if (x.rank() != 2) throw std::invalid_argument("softmax: rank " + std::to_string(x.rank()) + " unsupported");
  const int a = axis < 0 ? axis + 2 : axis;
  if (a != 0 && a != 1) throw std::invalid_argument("softmax: axis out of range");
  return Tensor<Scalar>::from_matrix(softmax(x.matrix(), a == 1 ? Axis::cols : Axis::rows));
}

template <typename Derived>
Matrix<typename Derived::Scalar> log_softmax_rows(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar peak = x.row(r).maxCoeff();
    const Scalar log_sum = std::log((x.row(r).array() - peak).exp().sum()) + peak;
    out.row(r) = x.row(r).array() - log_sum;
  }
  return out;
}

inline constexpr double kLayerNormEps = 1e-5;

// Row-wise layer normalisation with a learned gain and no bias.
template <typename Derived, typename DerivedGain>
Matrix<typename Derived::Scalar> layer_norm_rows(const Eigen::MatrixBase<Derived>& x,
                                                 const Eigen::MatrixBase<DerivedGain>& gain,
                                                 double eps = kLayerNormEps) {
  using Scalar = typename Derived::Scalar;
  const auto n = static_cast<Scalar>(x.cols());
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar mean = x.row(r).sum() / n;
    const auto centered = (x.row(r).array() - mean).eval();
    const Scalar var = centered.square().sum() / n;
    out.row(r) = (centered / std::sqrt(var + Scalar(eps))) * gain.array();
  }
  return out;
}

// tanh approximation of GELU.
template <std::floating_point Scalar>
Scalar gelu(Scalar x) {
  constexpr Scalar c = Scalar(0.7978845608028654);  // sqrt(2/pi)
  return Scalar(0.5) * x * (Scalar(1) + std::tanh(c * (x + Scalar(0.044715) * x * x * x)));
}

template <std::floating_point Scalar>
Scalar gelu_derivative(Scalar x) {
  constexpr Scalar c = Scalar(0.7978845608028654);
  const Scalar inner = c * (x + Scalar(0.044715) * x * x * x);
  const Scalar t = std::tanh(inner);
  const Scalar d_inner = c * (Scalar(1) + Scalar(3 * 0.044715) * x * x);
  return Scalar(0.5) * (Scalar(1) + t) + Scalar(0.5) * x * (Scalar(1) - t * t) * d_inner;
}

template <typename Derived>
Matrix<typename Derived::Scalar> gelu(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return gelu<Scalar>(v); });
}

// KL(p || q) for two probability vectors; terms with p == 0 contribute zero.
template <typename DerivedP, typename DerivedQ>
double kl_divergence(const Eigen::MatrixBase<DerivedP>& p, const Eigen::MatrixBase<DerivedQ>& q) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double pi = p(i);
    if (pi > 0.0) total += pi * (std::log(pi) - std::log(q(i)));
  }
  return total;
}

}  // namespace clens
