#pragma once

#include <Eigen/Dense>

#include <cstring>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hit {

template <class Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Shape = std::vector<Eigen::Index>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? " " : "") << s[i];
  os << "]";
  return os.str();
}

inline Eigen::Index shape_size(const Shape& s) {
  Eigen::Index n = 1;
  for (auto e : s) n *= e;
  return n;
}

/// Dense row-major tensor of rank >= 1. Storage is a 2-D Eigen matrix with
/// rows = product of all extents but the last and cols = the last extent,
/// which makes rank-2 math (the common case) zero-cost while still carrying
/// an n-d logical shape for grids and ROI outputs.
template <class Scalar>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(Shape shape) : shape_(std::move(shape)) {
    validate_shape();
    mat_.setZero(lead(), shape_.back());
  }

  TensorT(Shape shape, Matrix<Scalar> m) : shape_(std::move(shape)), mat_(std::move(m)) {
    validate_shape();
    if (mat_.rows() != lead() || mat_.cols() != shape_.back())
      throw std::invalid_argument("tensor: storage " + std::to_string(mat_.rows()) + "x" +
                                  std::to_string(mat_.cols()) + " does not match shape " +
                                  shape_str(shape_));
  }

  static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }

  static TensorT full(Shape shape, Scalar v) {
    TensorT t(std::move(shape));
    t.mat_.setConstant(v);
    return t;
  }

  static TensorT scalar(Scalar v) { return full({1, 1}, v); }

  static TensorT from_matrix(Matrix<Scalar> m) {
    Shape s{m.rows(), m.cols()};
    return TensorT(std::move(s), std::move(m));
  }

  static TensorT row(std::initializer_list<Scalar> vals) {
    Matrix<Scalar> m(1, static_cast<Eigen::Index>(vals.size()));
    Eigen::Index j = 0;
    for (Scalar v : vals) m(0, j++) = v;
    return from_matrix(std::move(m));
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  Eigen::Index size() const { return mat_.size(); }
  Eigen::Index rows() const { return mat_.rows(); }
  Eigen::Index cols() const { return mat_.cols(); }

  Matrix<Scalar>& mat() { return mat_; }
  const Matrix<Scalar>& mat() const { return mat_; }

  Scalar* data() { return mat_.data(); }
  const Scalar* data() const { return mat_.data(); }

  Scalar item() const {
    if (size() != 1) throw std::invalid_argument("tensor: item() on shape " + shape_str(shape_));
    return mat_(0, 0);
  }

  bool all_finite() const { return mat_.allFinite(); }

  bool same_bits(const TensorT& o) const {
    return shape_ == o.shape_ &&
           std::memcmp(data(), o.data(), sizeof(Scalar) * static_cast<size_t>(size())) == 0;
  }

  TensorT reshaped(Shape shape) const {
    if (shape_size(shape) != size())
      throw std::invalid_argument("tensor: cannot reshape " + shape_str(shape_) + " to " +
                                  shape_str(shape));
    Eigen::Index r = 1;
    for (size_t i = 0; i + 1 < shape.size(); ++i) r *= shape[i];
    Matrix<Scalar> m =
        Eigen::Map<const Matrix<Scalar>>(data(), r, shape.back());
    return TensorT(std::move(shape), std::move(m));
  }

  template <class T>
  TensorT<T> cast() const {
    return TensorT<T>(shape_, mat_.template cast<T>());
  }

 private:
  Eigen::Index lead() const {
    Eigen::Index r = 1;
    for (size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
    return r;
  }

  void validate_shape() const {
    if (shape_.empty()) throw std::invalid_argument("tensor: rank must be >= 1");
    for (auto e : shape_)
      if (e <= 0) throw std::invalid_argument("tensor: non-positive extent in " + shape_str(shape_));
  }

  Shape shape_;
  Matrix<Scalar> mat_;
};

using TensorF = TensorT<float>;
using TensorD = TensorT<double>;

}  // namespace hit
