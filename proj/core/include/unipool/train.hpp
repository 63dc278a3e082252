#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "unipool/data.hpp"
#include "unipool/model.hpp"

namespace unipool {

struct TrainConfig {
  double lr0 = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::int64_t epochs = 30;
  std::int64_t lr_decay_interval = 10;
  std::int64_t batch_size = 64;
  std::uint64_t seed = 1;
  std::int64_t precision = 32;  // 32 or 64
  bool augment = false;
  /// Epoch interval between checkpoint writes; 0 saves only the final epoch.
  std::int64_t ckpt_interval = 0;
};

void validate(const TrainConfig& cfg);

/// lr0 * 0.1^floor(epoch / interval); epochs count from 0.
double lr_at(const TrainConfig& cfg, std::int64_t epoch);

struct Metrics {
  std::int64_t epoch = 0;
  double train_loss = 0;
  double train_top1 = 0;
  double test_top1 = 0;
  double test_top5 = 0;
  double wall_time_s = 0;
};

/// CSV with header epoch,train_loss,train_top1,test_top1,test_top5,wall_time_s.
void write_metrics_csv(const std::string& path,
                       const std::vector<Metrics>& history);

/// Momentum buffers keyed like the model's named parameters.
template <typename T>
struct OptState {
  std::vector<Tensor<T>> momentum;

  static OptState make(Model<T>& model);
};

/// v = momentum*v + grad + wd*value; value -= lr*v; grads zeroed after.
template <typename T>
void sgd_step(Model<T>& model, OptState<T>& opt, T lr, T momentum, T wd);

/// Eval-mode metrics on one dataset; train_loss holds the mean cross
/// entropy of the evaluated split.
template <typename T>
Metrics evaluate(Model<T>& model, const Dataset& ds, std::int64_t batch_size);

/// Called after each epoch with the row just computed.
using EpochHook = std::function<void(const Metrics&)>;

/// Full training run per the SGD protocol; deterministic for a fixed seed.
/// Per-epoch shuffles derive from (seed, epoch), so resuming from a
/// checkpoint at start_epoch replays the same stream as an unbroken run.
/// Aborts with NumericError when the loss turns non-finite or stays above
/// 10x the initial loss for 3 consecutive epochs.
template <typename T>
std::vector<Metrics> train(Model<T>& model, OptState<T>& opt,
                           const Dataset& train_ds, const Dataset& test_ds,
                           const TrainConfig& cfg,
                           const EpochHook& hook = nullptr,
                           std::int64_t start_epoch = 0);

#define UNIPOOL_EXTERN_TRAIN(T)                                             \
  extern template struct OptState<T>;                                       \
  extern template void sgd_step(Model<T>&, OptState<T>&, T, T, T);          \
  extern template Metrics evaluate(Model<T>&, const Dataset&, std::int64_t); \
  extern template std::vector<Metrics> train(Model<T>&, OptState<T>&,       \
                                             const Dataset&, const Dataset&, \
                                             const TrainConfig&,             \
                                             const EpochHook&, std::int64_t);

UNIPOOL_EXTERN_TRAIN(float)
UNIPOOL_EXTERN_TRAIN(double)
#undef UNIPOOL_EXTERN_TRAIN

}  // namespace unipool
