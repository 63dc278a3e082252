#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "unipool/errors.hpp"

namespace unipool {

/// Ordered list of nonnegative extents, outermost first.
using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);
bool same_shape(const Shape& a, const Shape& b);

namespace detail {

template <typename T>
struct TensorStorage {
  std::vector<T> value;
  std::vector<T> grad;          // empty until a backward pass touches it
  bool requires_grad = false;   // leaf that wants gradients
  bool in_graph = false;        // produced by a recorded op
};

}  // namespace detail

/// Dense row-major tensor. Copies are shallow handles onto shared storage;
/// value buffers are never mutated by forward operations. Gradients
/// accumulate into the shared storage, so every handle of a tensor sees the
/// same grad.
template <typename T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;

  /// Zero-filled tensor of the given shape.
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<T> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T v);
  static Tensor scalar(T v) { return full({1}, v); }

  bool defined() const { return st_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::int64_t size() const { return st_ ? static_cast<std::int64_t>(st_->value.size()) : 0; }
  std::int64_t extent(std::size_t dim) const { return shape_.at(dim); }

  // Tensor is a shared handle: const protects the handle, not the storage,
  // so storage-mutating accessors are const members.
  std::span<const T> data() const { return {st_->value.data(), st_->value.size()}; }
  /// Mutable access; reserved for construction, loading and parameter updates.
  std::span<T> mut() const { return {st_->value.data(), st_->value.size()}; }

  /// The single element of a size-1 tensor.
  T item() const;

  bool requires_grad() const { return st_ && st_->requires_grad; }
  void set_requires_grad(bool v) const { st_->requires_grad = v; }
  /// True when gradients must flow through this tensor.
  bool needs_grad() const { return st_ && (st_->requires_grad || st_->in_graph); }
  void mark_in_graph() const { st_->in_graph = true; }

  bool has_grad() const { return st_ && !st_->grad.empty(); }
  std::span<const T> grad() const { return {st_->grad.data(), st_->grad.size()}; }
  /// Grad buffer, allocated (zero-filled) on first use.
  std::span<T> grad_mut() const;
  void zero_grad() const;

  /// New handle onto the same storage with a different shape (same numel).
  Tensor reshape(Shape new_shape) const;

  /// Deep copy of the value buffer; grad state is not copied.
  Tensor clone() const;

  /// Storage identity, for aliasing checks in tests.
  const void* storage_id() const { return st_.get(); }

  // Row-major element accessors (bounds unchecked in release).
  T at(std::int64_t i) const { return st_->value[static_cast<std::size_t>(i)]; }
  T at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const;

 private:
  std::shared_ptr<detail::TensorStorage<T>> st_;
  Shape shape_;
};

/// Throws NumericError when any element is NaN or Inf.
template <typename T>
void ensure_finite(const char* op, const Tensor<T>& t);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template void ensure_finite<float>(const char*, const Tensor<float>&);
extern template void ensure_finite<double>(const char*, const Tensor<double>&);

}  // namespace unipool
