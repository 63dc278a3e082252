#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unipool/ops.hpp"
#include "unipool/rng.hpp"
#include "unipool/tensor.hpp"

namespace unipool {

// All pooling ops reduce S x S blocks of a [N,C,H,W] map to single entries,
// giving [N,C,H/S,W/S]. When H or W is not divisible by S the map is cropped
// to the covered region first.

enum class PoolVariant {
  kMax,
  kAvg,
  kStride,
  kMixed,
  kGatedChannel,
  kGatedLayer,
  kUniversal,
};

/// Weight-map network used inside universal pooling.
enum class B1Kind { kFc1, kFc2, kConv };

struct PoolingSpec {
  PoolVariant variant = PoolVariant::kAvg;
  B1Kind b1 = B1Kind::kFc1;
  /// One set of weight-map parameters shared by all channels instead of
  /// per-channel sets.
  bool shared = false;
  /// Sample position inside each block for stride pooling.
  std::int64_t offset_row = 0;
  std::int64_t offset_col = 0;
};

/// Parses "max", "avg", "stride", "mixed", "gated-ch", "gated-layer",
/// "universal:fc1", "universal:fc2", "universal:conv". Throws UsageError.
PoolingSpec parse_pooling(const std::string& text);
std::string format_pooling(const PoolingSpec& spec);

template <typename T>
Tensor<T> max_pool(const Tensor<T>& f, std::int64_t s);
template <typename T>
Tensor<T> avg_pool(const Tensor<T>& f, std::int64_t s);
/// Entry at (off_r, off_c) of each block; offsets in [0, S).
template <typename T>
Tensor<T> stride_pool(const Tensor<T>& f, std::int64_t s, std::int64_t off_r = 0,
                      std::int64_t off_c = 0);

/// sigmoid(a) * max + (1 - sigmoid(a)) * avg with a trainable scalar a.
template <typename T>
Tensor<T> mixed_pool(const Tensor<T>& f, const Tensor<T>& a, std::int64_t s);

/// Per-block gate g = sigmoid(omega . block values) blending max and avg.
/// omega is [C,s*s] when per_channel, [1,s*s] otherwise.
template <typename T>
Tensor<T> gated_pool(const Tensor<T>& f, const Tensor<T>& omega,
                     std::int64_t s, bool per_channel);

// --- universal pooling -----------------------------------------------------

/// Softmax over each S x S block, independently per sample and channel.
/// Output entries are positive and each block sums to 1.
template <typename T>
Tensor<T> block_softmax(const Tensor<T>& fbar, std::int64_t s);

/// o[n,c,i,j] = sum over block (i,j) of pi * f. pi and f share shape.
template <typename T>
Tensor<T> block_weighted_sum(const Tensor<T>& pi, const Tensor<T>& f,
                             std::int64_t s);

/// [N,C,H,W] -> [N*C*(H/s)*(W/s), s*s]: one row per block, row-major within
/// the block. Pure index permutation.
template <typename T>
Tensor<T> blocks_to_rows(const Tensor<T>& f, std::int64_t s);
/// Inverse of blocks_to_rows for the given output geometry.
template <typename T>
Tensor<T> rows_to_blocks(const Tensor<T>& rows, std::int64_t s, std::int64_t n,
                         std::int64_t c, std::int64_t h, std::int64_t w);

/// Per-channel batched linear: rows [N*C*B, in] with C channel groups,
/// w [C,out,in], b [C,out] -> [N*C*B, out]. With w extent(0)==1 a single
/// parameter set is broadcast over channels.
template <typename T>
Tensor<T> per_channel_linear(const Tensor<T>& rows, const Tensor<T>& w,
                             const Tensor<T>& b, std::int64_t n,
                             std::int64_t c, std::int64_t blocks);

/// Parameters of one universal pooling site.
template <typename T>
struct UniversalState {
  B1Kind kind = B1Kind::kFc1;
  std::int64_t channels = 0;
  std::int64_t s = 0;
  std::int64_t hidden = 0;  // fc2 hidden width / conv hidden maps
  bool shared = false;

  /// fc weights w[i]: [Cw,out,in], b[i]: [Cw,out]; conv weights are
  /// [Cw*hidden,1,k,k] / [Cw,hidden,k,k] kernels plus batch-norm terms.
  std::vector<Tensor<T>> weights;
  std::vector<Tensor<T>> biases;
  Tensor<T> bn_gamma, bn_beta;
  BnStats<T> bn{0};

  /// Trainable tensors as (prefix + ".fc1.weight", ...) pairs.
  std::vector<std::pair<std::string, Tensor<T>*>> named_params(
      const std::string& prefix);
  /// Batch-norm running stats (conv kind only).
  std::vector<std::pair<std::string, Tensor<T>*>> named_buffers(
      const std::string& prefix);
};

/// Builds a state whose final layer is zero, so the site starts as exact
/// average pooling; hidden layers get fan-in uniform values. hidden picks the
/// fc2 width (conv uses 8 maps); pass 0 for the default s*s.
template <typename T>
UniversalState<T> make_universal(B1Kind kind, std::int64_t channels,
                                 std::int64_t s, bool shared, Rng& rng,
                                 std::int64_t hidden = 0);

/// Pre-softmax weight map: same shape as the (cropped) input.
template <typename T>
Tensor<T> b1_forward(const Tensor<T>& f, UniversalState<T>& st, bool training);

/// Pooled output plus the per-block attention weights that produced it.
template <typename T>
struct UniversalOut {
  Tensor<T> o;
  Tensor<T> pi;
};

/// Full site: weight map, block softmax, weighted reduce.
template <typename T>
UniversalOut<T> universal_pool(const Tensor<T>& f, UniversalState<T>& st,
                               bool training);

#define UNIPOOL_EXTERN_POOL(T)                                                \
  extern template Tensor<T> max_pool(const Tensor<T>&, std::int64_t);         \
  extern template Tensor<T> avg_pool(const Tensor<T>&, std::int64_t);         \
  extern template Tensor<T> stride_pool(const Tensor<T>&, std::int64_t,       \
                                        std::int64_t, std::int64_t);          \
  extern template Tensor<T> mixed_pool(const Tensor<T>&, const Tensor<T>&,    \
                                       std::int64_t);                         \
  extern template Tensor<T> gated_pool(const Tensor<T>&, const Tensor<T>&,    \
                                       std::int64_t, bool);                   \
  extern template Tensor<T> block_softmax(const Tensor<T>&, std::int64_t);    \
  extern template Tensor<T> block_weighted_sum(const Tensor<T>&,              \
                                               const Tensor<T>&,              \
                                               std::int64_t);                 \
  extern template Tensor<T> blocks_to_rows(const Tensor<T>&, std::int64_t);   \
  extern template Tensor<T> rows_to_blocks(const Tensor<T>&, std::int64_t,    \
                                           std::int64_t, std::int64_t,        \
                                           std::int64_t, std::int64_t);       \
  extern template Tensor<T> per_channel_linear(                               \
      const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::int64_t,     \
      std::int64_t, std::int64_t);                                            \
  extern template struct UniversalState<T>;                                   \
  extern template UniversalState<T> make_universal<T>(                        \
      B1Kind, std::int64_t, std::int64_t, bool, Rng&, std::int64_t);          \
  extern template Tensor<T> b1_forward(const Tensor<T>&, UniversalState<T>&,  \
                                       bool);                                 \
  extern template struct UniversalOut<T>;                                     \
  extern template UniversalOut<T> universal_pool(const Tensor<T>&,            \
                                                 UniversalState<T>&, bool);

UNIPOOL_EXTERN_POOL(float)
UNIPOOL_EXTERN_POOL(double)
#undef UNIPOOL_EXTERN_POOL

}  // namespace unipool
