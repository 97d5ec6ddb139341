#pragma once
// Dense row-major tensor. Contiguous storage, value semantics, no view
// aliasing; all layout logic lives here so kernels can work on raw pointers.
// The default constructors zero-fill; uninit() skips the fill for op outputs
// that are fully overwritten.

#include <algorithm>
#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtga {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : Tensor(std::move(shape), T(0)) {}

  Tensor(Shape shape, T fill) {
    init_storage(std::move(shape));
    std::fill_n(data_.get(), n_, fill);
  }

  Tensor(Shape shape, const std::vector<T>& data) {
    init_storage(std::move(shape));
    if (static_cast<std::int64_t>(data.size()) != numel())
      throw std::invalid_argument("tensor data size does not match shape " + shape_str(shape_));
    std::copy_n(data.data(), n_, data_.get());
  }

  Tensor(const Tensor& o) : shape_(o.shape_), n_(o.n_) {
    if (o.data_) {
      data_ = std::make_unique_for_overwrite<T[]>(n_);
      std::copy_n(o.data_.get(), n_, data_.get());
    }
  }
  Tensor& operator=(const Tensor& o) {
    if (this != &o) {
      Tensor tmp(o);
      *this = std::move(tmp);
    }
    return *this;
  }
  Tensor(Tensor&&) noexcept = default;
  Tensor& operator=(Tensor&&) noexcept = default;

  // Allocation without the zero fill; caller overwrites every element.
  static Tensor uninit(Shape shape) {
    Tensor t;
    t.init_storage(std::move(shape));
    return t;
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }

  bool defined() const { return !shape_.empty(); }
  const Shape& shape() const { return shape_; }
  std::int64_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t ndim() const { return shape_.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(n_); }

  T* data() { return data_.get(); }
  const T* data() const { return data_.get(); }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // 4-d accessor (NCHW and friends).
  T& at(std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d) {
    return data_[static_cast<std::size_t>(((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d)];
  }
  const T& at(std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d) const {
    return data_[static_cast<std::size_t>(((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d)];
  }

  // 2-d accessor.
  T& at(std::int64_t r, std::int64_t c) { return data_[static_cast<std::size_t>(r * shape_[1] + c)]; }
  const T& at(std::int64_t r, std::int64_t c) const {
    return data_[static_cast<std::size_t>(r * shape_[1] + c)];
  }

  Tensor reshaped(Shape s) const {
    if (numel_of(s) != numel())
      throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(s) +
                                  ": element count mismatch");
    Tensor out = *this;
    out.shape_ = std::move(s);
    return out;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out = Tensor<U>::uninit(shape_);
    for (std::int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<std::size_t>(i)]);
    return out;
  }

 private:
  void init_storage(Shape shape) {
    shape_ = std::move(shape);
    n_ = static_cast<std::size_t>(numel_of(shape_));
    data_ = std::make_unique_for_overwrite<T[]>(n_);
  }

  Shape shape_;
  std::size_t n_ = 0;
  std::unique_ptr<T[]> data_;
};

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

}  // namespace mtga
