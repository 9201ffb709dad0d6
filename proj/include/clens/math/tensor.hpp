#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace clens {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using RowMajorMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;

using Shape = std::vector<Eigen::Index>;

inline Eigen::Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Eigen::Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

// Dense n-dimensional array with row-major (C order) flat storage.
// Rank-2 tensors convert to and from Eigen matrices without reordering
// the logical layout.
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Vector<Scalar>::Zero(shape_size(shape_))) {}

  Tensor(Shape shape, Vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
      throw std::invalid_argument("tensor: shape " + shape_string(shape_) + " does not match " +
                                  std::to_string(data_.size()) + " values");
    }
  }

  template <typename Derived>
  static Tensor from_matrix(const Eigen::MatrixBase<Derived>& m) {
    RowMajorMatrix<Scalar> row_major = m;
    Vector<Scalar> flat = Eigen::Map<const Vector<Scalar>>(row_major.data(), row_major.size());
    return Tensor({m.rows(), m.cols()}, std::move(flat));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  Eigen::Index size() const { return data_.size(); }
  Eigen::Index dim(std::size_t axis) const { return shape_.at(axis); }

  const Vector<Scalar>& data() const { return data_; }
  Vector<Scalar>& data() { return data_; }

  Matrix<Scalar> matrix() const {
    if (rank() != 2) throw std::invalid_argument("tensor: matrix() requires rank 2, got " + shape_string(shape_));
    return Eigen::Map<const RowMajorMatrix<Scalar>>(data_.data(), shape_[0], shape_[1]);
  }

  bool all_finite() const { return data_.allFinite(); }

  void check_finite(const char* what) const {
#ifndef NDEBUG
    if (!all_finite()) throw std::domain_error(std::string(what) + ": non-finite value");
#else
    (void)what;
#endif
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  Shape shape_;
  Vector<Scalar> data_;
};

}  // namespace clens
