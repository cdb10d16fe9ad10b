#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rdd {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Number of elements described by `shape`; throws on non-positive extents.
Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Splits `shape` around `axis` into (outer, extent, inner) so that a
/// row-major buffer can be walked as a 3-d block.
struct AxisSplit {
  Index outer = 1;
  Index extent = 1;
  Index inner = 1;
};
AxisSplit split_axis(const Shape& shape, int axis);

/// Dense row-major N-d array. Storage is an Eigen column array, so bulk
/// arithmetic goes through `data()` and element access through `operator()`.
template <typename Scalar>
class DenseTensor {
 public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  DenseTensor() = default;

  explicit DenseTensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)), data_(Storage::Constant(numel(shape_), fill)) {}

  DenseTensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape_));
    }
  }

  DenseTensor(Shape shape, std::initializer_list<Scalar> values) : shape_(std::move(shape)) {
    data_.resize(static_cast<Index>(values.size()));
    Index i = 0;
    for (Scalar v : values) data_[i++] = v;
    if (data_.size() != numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape_));
    }
  }

  static DenseTensor scalar(Scalar v) { return DenseTensor(Shape{1}, v); }

  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  Index dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return data_.size(); }
  bool empty() const { return shape_.empty(); }

  Storage& data() { return data_; }
  const Storage& data() const { return data_; }
  Scalar* raw() { return data_.data(); }
  const Scalar* raw() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  template <typename... I>
  Scalar& operator()(I... idx) {
    return data_[offset(idx...)];
  }
  template <typename... I>
  Scalar operator()(I... idx) const {
    return data_[offset(idx...)];
  }

  /// Same data viewed under a new shape with equal element count.
  DenseTensor reshaped(Shape shape) const { return DenseTensor(std::move(shape), data_); }

  template <typename Other>
  DenseTensor<Other> cast() const {
    return DenseTensor<Other>(shape_, data_.template cast<Other>().eval());
  }

  friend bool operator==(const DenseTensor& a, const DenseTensor& b) {
    return a.shape_ == b.shape_ && (a.data_ == b.data_).all();
  }

 private:
  template <typename... I>
  Index offset(I... idx) const {
    static_assert(sizeof...(I) > 0);
    const Index indices[] = {static_cast<Index>(idx)...};
    Index off = 0;
    for (std::size_t k = 0; k < sizeof...(I); ++k) off = off * shape_[k] + indices[k];
    return off;
  }

  Shape shape_;
  Storage data_;
};

using Tensor = DenseTensor<double>;
using LabelMap = DenseTensor<std::int32_t>;

}  // namespace rdd
