#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace frepa {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

/// Raised for data errors: bad shapes, non-finite values, malformed files.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

/// Row-major strides for `shape`.
inline Shape row_major_strides(const Shape& shape) {
  Shape strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

/// Dense n-d array, row-major, leading axis is the channel axis for images
/// ([C, H, W] or [C, D, H, W]). Storage is a flat Eigen array so the usual
/// coefficient-wise expressions apply to `data()` directly.
template <typename Scalar_>
class BasicTensor {
 public:
  using Scalar = Scalar_;
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using ChannelMap = Eigen::Map<Array>;
  using ConstChannelMap = Eigen::Map<const Array>;
  using Plane = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using PlaneMap = Eigen::Map<Plane>;
  using ConstPlaneMap = Eigen::Map<const Plane>;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_ = Array::Zero(shape_size(shape_));
  }

  BasicTensor(Shape shape, Array data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != shape_size(shape_))
      throw Error("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                  shape_string(shape_));
  }

  static BasicTensor constant(Shape shape, Scalar value) {
    BasicTensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Index channels() const { return shape_.empty() ? 0 : shape_.front(); }
  Shape spatial_shape() const { return shape_.empty() ? Shape{} : Shape(shape_.begin() + 1, shape_.end()); }
  Index spatial_size() const { return channels() == 0 ? 0 : size() / channels(); }
  Index spatial_rank() const { return rank() - 1; }

  Array& data() { return data_; }
  const Array& data() const { return data_; }

  ChannelMap channel(Index c) { return ChannelMap(data_.data() + c * spatial_size(), spatial_size()); }
  ConstChannelMap channel(Index c) const {
    return ConstChannelMap(data_.data() + c * spatial_size(), spatial_size());
  }

  /// Channel `c` of a [C, H, W] tensor as a row-major H x W matrix.
  PlaneMap plane(Index c) {
    require_planar();
    return PlaneMap(data_.data() + c * spatial_size(), shape_[1], shape_[2]);
  }
  ConstPlaneMap plane(Index c) const {
    require_planar();
    return ConstPlaneMap(data_.data() + c * spatial_size(), shape_[1], shape_[2]);
  }

  Scalar& operator()(Index c, Index y, Index x) { return data_[(c * shape_[1] + y) * shape_[2] + x]; }
  Scalar operator()(Index c, Index y, Index x) const { return data_[(c * shape_[1] + y) * shape_[2] + x]; }

  template <typename Other>
  BasicTensor<Other> cast() const {
    return BasicTensor<Other>(shape_, data_.template cast<Other>());
  }

  bool all_finite() const { return data_.isFinite().all(); }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && (a.data_ == b.data_).all();
  }

 private:
  static void check_shape(const Shape& shape) {
    for (Index d : shape)
      if (d <= 0) throw Error("tensor dimensions must be positive, got " + shape_string(shape));
  }
  void require_planar() const {
    if (shape_.size() != 3) throw Error("expected a [C, H, W] tensor, got " + shape_string(shape_));
  }

  Shape shape_;
  Array data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// Concatenates along the channel axis; spatial shapes must agree.
template <typename Scalar>
BasicTensor<Scalar> concat_channels(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  if (a.spatial_shape() != b.spatial_shape())
    throw Error("channel concatenation of mismatched spatial shapes " + shape_string(a.shape()) + " and " +
                shape_string(b.shape()));
  Shape shape = a.shape();
  shape[0] = a.channels() + b.channels();
  typename BasicTensor<Scalar>::Array data(a.size() + b.size());
  data << a.data(), b.data();
  return BasicTensor<Scalar>(std::move(shape), std::move(data));
}

/// Mean over channels, returned as a single-channel tensor.
template <typename Scalar>
BasicTensor<Scalar> channel_mean(const BasicTensor<Scalar>& t) {
  Shape shape = t.shape();
  shape[0] = 1;
  BasicTensor<Scalar> out(shape);
  for (Index c = 0; c < t.channels(); ++c) out.channel(0) += t.channel(c);
  out.data() /= static_cast<Scalar>(t.channels());
  return out;
}

template <typename Scalar>
double max_abs_diff(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  if (a.shape() != b.shape()) throw Error("max_abs_diff of mismatched shapes");
  return static_cast<double>((a.data() - b.data()).abs().maxCoeff());
}

template <typename Scalar>
double mean_value(const BasicTensor<Scalar>& t) {
  return t.data().template cast<double>().mean();
}

}  // namespace frepa
