#pragma once

#include <functional>
#include <vector>

#include "unipool/tensor.hpp"

namespace unipool {

/// One recorded operation. The closure pulls gradients from the op's output
/// storage and accumulates into the inputs' grad buffers.
struct TapeNode {
  const char* op;
  std::function<void()> backward;
};

/// Append-only record of the forward pass for one precision.
template <typename T>
class Tape {
 public:
  void record(const char* op, std::function<void()> fn) {
    nodes_.push_back(TapeNode{op, std::move(fn)});
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  /// Seeds d(loss)/d(loss)=1 and runs every node's backward exactly once,
  /// newest first. The loss must be a scalar produced under this tape.
  void backward(Tensor<T>& loss);

  /// Tape ops record into, or nullptr when recording is off.
  static Tape*& current();

 private:
  std::vector<TapeNode> nodes_;
};

/// RAII: installs a tape as current for the enclosing scope.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : prev_(Tape<T>::current()) {
    Tape<T>::current() = &tape;
  }
  ~TapeScope() { Tape<T>::current() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace unipool
