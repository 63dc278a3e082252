#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "unipool/tape.hpp"
#include "unipool/tensor.hpp"

namespace unipool {

// Differentiable ops. Every op validates shapes (ShapeError), never mutates
// its inputs' value buffers, checks outputs for NaN/Inf (NumericError), and
// when a tape is active records a backward closure that accumulates into the
// inputs' grad buffers.

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c);

/// x * s where s holds a single element; s may be a trainable parameter.
template <typename T>
Tensor<T> bmul(const Tensor<T>& x, const Tensor<T>& s);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> vexp(const Tensor<T>& x);

/// Scalar sum of all elements.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);

/// [N,K] x [K,M] -> [N,M].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Fully connected: x [N,in], w [out,in], b [out] -> [N,out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

/// x [N,C,H,W], w [F,C/groups,kh,kw], optional bias [F].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w,
                 const std::optional<Tensor<T>>& bias, std::int64_t stride,
                 std::int64_t pad, std::int64_t groups = 1);

/// Running statistics owned by a batch-norm layer; updated in training mode.
template <typename T>
struct BnStats {
  Tensor<T> mean;
  Tensor<T> var;
  explicit BnStats(std::int64_t channels = 0);
};

/// Batch norm over N,H,W per channel. Training mode normalizes with batch
/// statistics (biased variance) and folds them into the running stats;
/// eval mode normalizes with the running stats.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, BnStats<T>& stats, bool training,
                     T momentum = T(0.1), T eps = T(1e-5));

/// Mean softmax cross entropy of logits [N,K] against integer labels.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits,
                        const std::vector<std::int32_t>& labels);

/// Top-left h2 x w2 region of a [N,C,H,W] tensor.
template <typename T>
Tensor<T> crop2d(const Tensor<T>& x, std::int64_t h2, std::int64_t w2);

/// Row-wise softmax of a [N,K] tensor, forward only (no tape record).
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits);

#define UNIPOOL_EXTERN_OPS(T)                                              \
  extern template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);       \
  extern template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);       \
  extern template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);       \
  extern template Tensor<T> scale(const Tensor<T>&, T);                    \
  extern template Tensor<T> add_scalar(const Tensor<T>&, T);               \
  extern template Tensor<T> bmul(const Tensor<T>&, const Tensor<T>&);      \
  extern template Tensor<T> relu(const Tensor<T>&);                        \
  extern template Tensor<T> sigmoid(const Tensor<T>&);                     \
  extern template Tensor<T> vexp(const Tensor<T>&);                        \
  extern template Tensor<T> sum(const Tensor<T>&);                         \
  extern template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);    \
  extern template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&,     \
                                   const Tensor<T>&);                      \
  extern template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&,     \
                                   const std::optional<Tensor<T>>&,        \
                                   std::int64_t, std::int64_t,             \
                                   std::int64_t);                          \
  extern template struct BnStats<T>;                                       \
  extern template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, \
                                       const Tensor<T>&, BnStats<T>&,      \
                                       bool, T, T);                        \
  extern template Tensor<T> cross_entropy(                                 \
      const Tensor<T>&, const std::vector<std::int32_t>&);                 \
  extern template Tensor<T> crop2d(const Tensor<T>&, std::int64_t,         \
                                   std::int64_t);                          \
  extern template Tensor<T> softmax_rows(const Tensor<T>&);

UNIPOOL_EXTERN_OPS(float)
UNIPOOL_EXTERN_OPS(double)
#undef UNIPOOL_EXTERN_OPS

}  // namespace unipool
