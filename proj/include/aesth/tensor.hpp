#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "aesth/error.hpp"

namespace aesth {

using Index = Eigen::Index;

/// Tensor extents, outermost first. Feature maps use N, C, H, W.
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Dense row-major array of rank 1 to 4.
///
/// Storage is a contiguous Eigen vector so whole-tensor arithmetic can use
/// Eigen expressions through `values()`, and rank-2 tensors can be viewed as
/// row-major matrices through `matrix()`. A zero extent is permitted so that
/// an N x 0 tensor can act as the neutral element of `concat`.
template <typename Scalar>
class Tensor {
 public:
  using Scalar_t = Scalar;

  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.setConstant(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values) : Tensor(std::move(shape)) {
    if (static_cast<Index>(values.size()) != data_.size())
      throw DimensionError("Tensor: " + std::to_string(values.size()) +
                           " values for shape " + shape_string(shape_));
    std::copy(values.begin(), values.end(), data_.data());
  }

  Tensor(Shape shape, Vector<Scalar> values) : shape_(std::move(shape)), data_(std::move(values)) {
    check_shape(shape_);
    if (data_.size() != shape_size(shape_))
      throw DimensionError("Tensor: " + std::to_string(data_.size()) + " values for shape " +
                           shape_string(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index i) const { return shape_.at(static_cast<std::size_t>(i)); }
  Index size() const { return data_.size(); }
  bool empty() const { return shape_.empty(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Vector<Scalar>& values() { return data_; }
  const Vector<Scalar>& values() const { return data_; }

  Eigen::Map<RowMatrix<Scalar>> matrix() {
    require_rank(2, "matrix");
    return {data_.data(), shape_[0], shape_[1]};
  }
  Eigen::Map<const RowMatrix<Scalar>> matrix() const {
    require_rank(2, "matrix");
    return {data_.data(), shape_[0], shape_[1]};
  }

  template <typename... Idx>
  Scalar& operator()(Idx... idx) {
    return data_[offset(idx...)];
  }
  template <typename... Idx>
  const Scalar& operator()(Idx... idx) const {
    return data_[offset(idx...)];
  }

  /// Pointer to the H x W plane of sample n, channel c of a rank-4 tensor.
  Scalar* plane(Index n, Index c) { return data_.data() + (n * shape_[1] + c) * shape_[2] * shape_[3]; }
  const Scalar* plane(Index n, Index c) const {
    return data_.data() + (n * shape_[1] + c) * shape_[2] * shape_[3];
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size())
      throw DimensionError("reshape " + shape_string(shape_) + " -> " + shape_string(shape));
    return Tensor(std::move(shape), data_);
  }

  void set_zero() { data_.setZero(); }

  bool all_finite() const { return data_.allFinite(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static void check_shape(const Shape& shape) {
    if (shape.empty() || shape.size() > 4)
      throw DimensionError("Tensor rank must be 1..4, got " + std::to_string(shape.size()));
    for (Index e : shape)
      if (e < 0) throw DimensionError("negative extent in " + shape_string(shape));
  }

  void require_rank(Index r, const char* what) const {
    if (rank() != r)
      throw DimensionError(std::string(what) + ": expected rank " + std::to_string(r) + ", got " +
                           shape_string(shape_));
  }

  template <typename... Idx>
  Index offset(Idx... idx) const {
    const Index list[] = {static_cast<Index>(idx)...};
    Index off = 0;
    for (std::size_t i = 0; i < sizeof...(Idx); ++i) off = off * shape_[i] + list[i];
    return off;
  }

  Shape shape_;
  Vector<Scalar> data_;
};

using Tensord = Tensor<double>;

/// A value with a same-shaped gradient accumulator.
template <typename Scalar>
struct GradPair {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;

  GradPair() = default;
  explicit GradPair(Tensor<Scalar> v) : value(std::move(v)), grad(Tensor<Scalar>::zeros_like(value)) {}
};

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* what) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(what) + ": shape " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
}

template <typename Scalar>
void require_rank(const Tensor<Scalar>& t, Index rank, const char* what) {
  if (t.rank() != rank)
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
}

/// c = a * b for a (M x K) and b (K x N).
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0))
    throw DimensionError("matmul: inner extents " + shape_string(a.shape()) + " * " +
                         shape_string(b.shape()));
  Tensor<Scalar> c({a.dim(0), b.dim(1)});
  c.matrix().noalias() = a.matrix() * b.matrix();
  return c;
}

}  // namespace aesth
