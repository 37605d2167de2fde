#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cmkm {

using Index = std::ptrdiff_t;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// Dense row-major tensor with value semantics.
template <typename Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real(0))
      : shape_(std::move(shape)), data_(static_cast<std::size_t>(checked_size(shape_)), fill) {}
  Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<Index>(data_.size()) != checked_size(shape_))
      throw std::invalid_argument("tensor data size does not match shape " + shape_str(shape_));
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  Index dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return static_cast<Index>(data_.size()); }
  bool empty() const { return data_.empty(); }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  std::span<Real> values() { return data_; }
  std::span<const Real> values() const { return data_; }
  std::vector<Real>& storage() { return data_; }
  const std::vector<Real>& storage() const { return data_; }

  Real& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  const Real& operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  template <typename... I>
  Real& operator()(I... idx) { return data_[static_cast<std::size_t>(offset(idx...))]; }
  template <typename... I>
  const Real& operator()(I... idx) const { return data_[static_cast<std::size_t>(offset(idx...))]; }

  void reshape(Shape shape) {
    if (checked_size(shape) != size())
      throw std::invalid_argument("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    shape_ = std::move(shape);
  }
  Tensor reshaped(Shape shape) const {
    Tensor out = *this;
    out.reshape(std::move(shape));
    return out;
  }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename To>
  Tensor<To> cast() const {
    std::vector<To> out(data_.begin(), data_.end());
    return Tensor<To>(shape_, std::move(out));
  }

  // Rows [begin, end) along axis 0.
  Tensor slice_rows(Index begin, Index end) const {
    if (rank() == 0 || begin < 0 || end > dim(0) || begin > end)
      throw std::out_of_range("slice_rows out of range");
    Shape s = shape_;
    s[0] = end - begin;
    const Index stride = dim(0) == 0 ? 0 : size() / dim(0);
    return Tensor(s, std::vector<Real>(data_.begin() + begin * stride, data_.begin() + end * stride));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static Index checked_size(const Shape& shape) {
    for (Index d : shape)
      if (d < 0) throw std::invalid_argument("negative tensor dimension in " + shape_str(shape));
    return shape_size(shape);
  }

  template <typename... I>
  Index offset(I... idx) const {
    const Index ids[] = {static_cast<Index>(idx)...};
    Index off = 0;
    for (std::size_t a = 0; a < sizeof...(I); ++a) off = off * shape_[a] + ids[a];
    return off;
  }

  Shape shape_;
  std::vector<Real> data_;
};

// Gathers rows of `src` (along axis 0) in the order of `rows`.
template <typename Real>
Tensor<Real> gather_rows(const Tensor<Real>& src, std::span<const Index> rows) {
  Shape s = src.shape();
  const Index stride = src.dim(0) == 0 ? 0 : src.size() / src.dim(0);
  s[0] = static_cast<Index>(rows.size());
  Tensor<Real> out(s);
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy_n(src.data() + rows[r] * stride, stride, out.data() + static_cast<Index>(r) * stride);
  return out;
}

}  // namespace cmkm
