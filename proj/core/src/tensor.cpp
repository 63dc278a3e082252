#include "unipool/tensor.hpp"

#include <cmath>
#include <sstream>

namespace unipool {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) {
    if (e < 0) throw ShapeError("negative extent in " + shape_str(shape));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

template <typename T>
Tensor<T>::Tensor(Shape shape)
    : st_(std::make_shared<detail::TensorStorage<T>>()),
      shape_(std::move(shape)) {
  st_->value.assign(static_cast<std::size_t>(numel(shape_)), T(0));
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : st_(std::make_shared<detail::TensorStorage<T>>()),
      shape_(std::move(shape)) {
  if (static_cast<std::int64_t>(values.size()) != numel(shape_))
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not fill " + shape_str(shape_));
  st_->value = std::move(values);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T v) {
  Tensor t(std::move(shape));
  for (auto& e : t.st_->value) e = v;
  return t;
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1)
    throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return st_->value[0];
}

template <typename T>
std::span<T> Tensor<T>::grad_mut() const {
  if (st_->grad.empty()) st_->grad.assign(st_->value.size(), T(0));
  return {st_->grad.data(), st_->grad.size()};
}

template <typename T>
void Tensor<T>::zero_grad() const {
  if (st_) st_->grad.clear();
}

template <typename T>
Tensor<T> Tensor<T>::reshape(Shape new_shape) const {
  if (numel(new_shape) != size())
    throw ShapeError("reshape " + shape_str(shape_) + " -> " +
                     shape_str(new_shape));
  Tensor t;
  t.st_ = st_;
  t.shape_ = std::move(new_shape);
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor t;
  t.st_ = std::make_shared<detail::TensorStorage<T>>();
  t.st_->value = st_->value;
  t.shape_ = shape_;
  return t;
}

template <typename T>
T Tensor<T>::at4(std::int64_t n, std::int64_t c, std::int64_t h,
                 std::int64_t w) const {
  const auto& s = shape_;
  return st_->value[static_cast<std::size_t>(
      ((n * s[1] + c) * s[2] + h) * s[3] + w)];
}

template <typename T>
void ensure_finite(const char* op, const Tensor<T>& t) {
  for (const T v : t.data()) {
    if (!((v - v) == T(0)))
      throw NumericError(std::string(op) + " produced a non-finite value");
  }
}

template class Tensor<float>;
template class Tensor<double>;
template void ensure_finite<float>(const char*, const Tensor<float>&);
template void ensure_finite<double>(const char*, const Tensor<double>&);

}  // namespace unipool
