#include "unipool/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "unipool/ops.hpp"
#include "unipool/tape.hpp"

namespace unipool {
namespace {

template <typename T>
Tensor<T> images_as(const Tensor<double>& images);

template <>
Tensor<double> images_as<double>(const Tensor<double>& images) {
  return images;
}

template <>
Tensor<float> images_as<float>(const Tensor<double>& images) {
  return to_f32(images);
}

/// rank of the label among the logits (strictly-greater count).
template <typename T>
std::int64_t label_rank(const T* row, std::int64_t k, std::int32_t label) {
  std::int64_t rank = 0;
  const T ref = row[label];
  for (std::int64_t j = 0; j < k; ++j)
    if (row[j] > ref) ++rank;
  return rank;
}

}  // namespace

void validate(const TrainConfig& cfg) {
  if (cfg.lr0 <= 0 || cfg.momentum < 0 || cfg.weight_decay < 0 ||
      cfg.epochs < 1 || cfg.lr_decay_interval < 1 || cfg.batch_size < 1)
    throw UsageError("training configuration values must be positive");
  if (cfg.lr_decay_interval > cfg.epochs)
    throw UsageError("lr decay interval " +
                     std::to_string(cfg.lr_decay_interval) +
                     " exceeds epoch count " + std::to_string(cfg.epochs));
  if (cfg.precision != 32 && cfg.precision != 64)
    throw UsageError("precision must be 32 or 64");
}

double lr_at(const TrainConfig& cfg, std::int64_t epoch) {
  return cfg.lr0 * std::pow(0.1, static_cast<double>(
                                     epoch / cfg.lr_decay_interval));
}

void write_metrics_csv(const std::string& path,
                       const std::vector<Metrics>& history) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "epoch,train_loss,train_top1,test_top1,test_top5,wall_time_s\n";
  char buf[256];
  for (const auto& m : history) {
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g,%.3f\n",
                  static_cast<long long>(m.epoch), m.train_loss, m.train_top1,
                  m.test_top1, m.test_top5, m.wall_time_s);
    out << buf;
  }
  if (!out) throw DataError("short write on " + path);
}

template <typename T>
OptState<T> OptState<T>::make(Model<T>& model) {
  OptState<T> opt;
  for (auto& [name, t] : model.params())
    opt.momentum.push_back(Tensor<T>::zeros(t->shape()));
  return opt;
}

template <typename T>
void sgd_step(Model<T>& model, OptState<T>& opt, T lr, T momentum, T wd) {
  auto params = model.params();
  if (params.size() != opt.momentum.size())
    throw ShapeError("optimizer state does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>* p = params[i].second;
    auto value = p->mut();
    auto vel = opt.momentum[i].mut();
    if (p->has_grad()) {
      auto g = p->grad();
      for (std::size_t j = 0; j < value.size(); ++j) {
        vel[j] = momentum * vel[j] + g[j] + wd * value[j];
        value[j] -= lr * vel[j];
      }
    } else {
      for (std::size_t j = 0; j < value.size(); ++j) {
        vel[j] = momentum * vel[j] + wd * value[j];
        value[j] -= lr * vel[j];
      }
    }
    p->zero_grad();
  }
}

template <typename T>
Metrics evaluate(Model<T>& model, const Dataset& ds, std::int64_t batch_size) {
  Metrics m;
  const std::int64_t bs = std::min<std::int64_t>(batch_size, ds.size());
  BatchIter iter(ds, bs, 0, false);
  Batch batch;
  double loss_sum = 0;
  std::int64_t top1 = 0, top5 = 0, count = 0;
  const std::int64_t k5 = 5;
  while (iter.next(batch)) {
    Tensor<T> x = images_as<T>(batch.images);
    ForwardOut<T> out = model.forward(x, false);
    Tensor<T> loss = cross_entropy(out.logits, batch.labels);
    const std::int64_t n = out.logits.extent(0);
    const std::int64_t k = out.logits.extent(1);
    loss_sum += static_cast<double>(loss.item()) * static_cast<double>(n);
    auto logits = out.logits.data();
    for (std::int64_t i = 0; i < n; ++i) {
      const std::int64_t rank = label_rank(
          logits.data() + i * k, k, batch.labels[static_cast<std::size_t>(i)]);
      if (rank == 0) ++top1;
      if (rank < k5) ++top5;
    }
    count += n;
  }
  m.train_loss = loss_sum / static_cast<double>(count);
  m.test_top1 = static_cast<double>(top1) / static_cast<double>(count);
  m.test_top5 = static_cast<double>(top5) / static_cast<double>(count);
  return m;
}

template <typename T>
std::vector<Metrics> train(Model<T>& model, OptState<T>& opt,
                           const Dataset& train_ds, const Dataset& test_ds,
                           const TrainConfig& cfg, const EpochHook& hook,
                           std::int64_t start_epoch) {
  validate(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<Metrics> history;
  double initial_loss = -1;
  int high_loss_streak = 0;
  for (std::int64_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const T lr = static_cast<T>(lr_at(cfg, epoch));
    BatchIter iter(train_ds, cfg.batch_size,
                   Rng::derive(cfg.seed, 1000 + static_cast<std::uint64_t>(
                                             epoch)),
                   true);
    Rng aug_rng(Rng::derive(cfg.seed,
                            2000 + static_cast<std::uint64_t>(epoch)));
    Batch batch;
    double loss_sum = 0;
    std::int64_t top1 = 0, count = 0;
    while (iter.next(batch)) {
      if (cfg.augment) augment_batch(batch, aug_rng);
      Tensor<T> x = images_as<T>(batch.images);
      Tape<T> tape;
      Tensor<T> loss;
      {
        TapeScope<T> scope(tape);
        ForwardOut<T> out = model.forward(x, true);
        loss = cross_entropy(out.logits, batch.labels);
        const std::int64_t n = out.logits.extent(0);
        const std::int64_t k = out.logits.extent(1);
        auto logits = out.logits.data();
        for (std::int64_t i = 0; i < n; ++i)
          if (label_rank(logits.data() + i * k, k,
                         batch.labels[static_cast<std::size_t>(i)]) == 0)
            ++top1;
        loss_sum += static_cast<double>(loss.item()) * static_cast<double>(n);
        count += n;
        tape.backward(loss);
      }
      sgd_step(model, opt, lr, static_cast<T>(cfg.momentum),
               static_cast<T>(cfg.weight_decay));
    }
    Metrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(count);
    m.train_top1 = static_cast<double>(top1) / static_cast<double>(count);
    const Metrics ev = evaluate(model, test_ds, cfg.batch_size);
    m.test_top1 = ev.test_top1;
    m.test_top5 = ev.test_top5;
    m.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    history.push_back(m);
    if (hook) hook(m);
    if (!(m.train_loss == m.train_loss))
      throw NumericError("training diverged: loss is NaN at epoch " +
                         std::to_string(epoch));
    if (initial_loss < 0) initial_loss = m.train_loss;
    if (m.train_loss > 10.0 * initial_loss) {
      if (++high_loss_streak >= 3)
        throw NumericError(
            "training diverged: loss above 10x initial for 3 epochs at epoch " +
            std::to_string(epoch));
    } else {
      high_loss_streak = 0;
    }
  }
  return history;
}

#define UNIPOOL_INST_TRAIN(T)                                          \
  template struct OptState<T>;                                         \
  template void sgd_step(Model<T>&, OptState<T>&, T, T, T);            \
  template Metrics evaluate(Model<T>&, const Dataset&, std::int64_t);  \
  template std::vector<Metrics> train(Model<T>&, OptState<T>&,         \
                                      const Dataset&, const Dataset&,  \
                                      const TrainConfig&,              \
                                      const EpochHook&, std::int64_t);

UNIPOOL_INST_TRAIN(float)
UNIPOOL_INST_TRAIN(double)
#undef UNIPOOL_INST_TRAIN

}  // namespace unipool
