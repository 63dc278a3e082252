#include "unipool/tape.hpp"

#include "unipool/branch_trace.hpp"

namespace unipool {

template <typename T>
void Tape<T>::backward(Tensor<T>& loss) {
  if (loss.size() != 1)
    throw ShapeError("backward needs a scalar loss, got " +
                     shape_str(loss.shape()));
  loss.grad_mut()[0] = T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
}

template <typename T>
Tape<T>*& Tape<T>::current() {
  thread_local Tape<T>* cur = nullptr;
  return cur;
}

template class Tape<float>;
template class Tape<double>;

BranchTrace*& BranchTrace::current() {
  thread_local BranchTrace* cur = nullptr;
  return cur;
}

}  // namespace unipool
