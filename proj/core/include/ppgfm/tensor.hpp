#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace ppgfm {

namespace tensor_detail {

/// std::allocator variant whose no-argument construct() default-initializes,
/// so resize() can hand back raw storage without the memset.
template <typename T>
struct NoInitAllocator : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = NoInitAllocator<U>;
  };
  NoInitAllocator() = default;
  template <typename U>
  NoInitAllocator(const NoInitAllocator<U>&) noexcept {}
  template <typename U>
  void construct(U* p) noexcept(noexcept(::new (static_cast<void*>(p)) U)) {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

}  // namespace tensor_detail

/// Dense row-major tensor with value semantics. The autodiff graph, the
/// model and all file formats move data around as Tensor<float> or
/// Tensor<double>; there is no view/stride machinery on purpose.
template <typename T>
class Tensor {
 public:
  using Storage = std::vector<T, tensor_detail::NoInitAllocator<T>>;

  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape, T fill = T{})
      : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}

  Tensor(std::vector<int64_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    if (static_cast<int64_t>(data_.size()) != checked_numel(shape_))
      throw std::invalid_argument("tensor: data length does not match shape");
  }

  /// Storage without the zero fill, for outputs every element of which is
  /// about to be written. Reading before writing is undefined.
  static Tensor uninitialized(std::vector<int64_t> shape) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_.resize(static_cast<size_t>(checked_numel(t.shape_)));
    return t;
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t ndim() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int64_t i) const { return shape_.at(static_cast<size_t>(i)); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  Storage& vec() { return data_; }
  const Storage& vec() const { return data_; }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  /// Scalar accessor; tensor must hold exactly one element.
  T item() const {
    if (numel() != 1) throw std::logic_error("tensor: item() on non-scalar");
    return data_[0];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  /// Reinterpret the buffer under a new shape with identical element count.
  Tensor reshaped(std::vector<int64_t> new_shape) const {
    Tensor out;
    out.shape_ = std::move(new_shape);
    if (checked_numel(out.shape_) != numel())
      throw std::invalid_argument("tensor: reshape changes element count");
    out.data_ = data_;
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> d(data_.size());
    for (size_t i = 0; i < data_.size(); ++i) d[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(d));
  }

  static std::string shape_str(const std::vector<int64_t>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
      if (i) out += ", ";
      out += std::to_string(s[i]);
    }
    return out + "]";
  }

 private:
  static int64_t checked_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
      if (d < 0) throw std::invalid_argument("tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  std::vector<int64_t> shape_;
  Storage data_;
};

}  // namespace ppgfm
