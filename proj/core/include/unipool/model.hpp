#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "unipool/pooling.hpp"

namespace unipool {

enum class Arch { kVggCifar, kResNetCifar, kTinyVgg, kTinyResNet };

/// "vgg", "resnet", "tiny-vgg", "tiny-resnet".
Arch parse_arch(const std::string& text);
std::string format_arch(Arch arch);
bool is_tiny(Arch arch);

struct ModelConfig {
  Arch arch = Arch::kTinyResNet;
  PoolingSpec local_pool;
  PoolingSpec global_pool;
  std::int64_t num_classes = 10;
  std::int64_t in_channels = 3;
  std::int64_t image_size = 32;
};

/// 3x3 (or 1x1 projection) convolution with batch norm and optional ReLU.
template <typename T>
struct ConvBn {
  std::string name;
  Tensor<T> w;
  Tensor<T> gamma, beta;
  BnStats<T> stats{0};
  std::int64_t stride = 1, pad = 1;
  bool relu_after = true;

  Tensor<T> forward(const Tensor<T>& x, bool training);
  void collect(std::vector<std::pair<std::string, Tensor<T>*>>& params,
               std::vector<std::pair<std::string, Tensor<T>*>>& buffers);
};

/// One pooling slot; which parameter set is live depends on spec.variant.
template <typename T>
struct PoolSite {
  std::string name;
  PoolingSpec spec;
  std::int64_t s = 2;

  Tensor<T> mix_logit;
  Tensor<T> gate_omega;
  UniversalState<T> uni;

  /// pi_out receives the attention map at universal sites, untouched
  /// otherwise.
  Tensor<T> forward(const Tensor<T>& x, bool training,
                    Tensor<T>* pi_out = nullptr);
  void collect(std::vector<std::pair<std::string, Tensor<T>*>>& params,
               std::vector<std::pair<std::string, Tensor<T>*>>& buffers);
};

/// Two 3x3 conv+BN layers with a shortcut; 1x1 projection when the channel
/// count changes.
template <typename T>
struct BasicBlock {
  std::string name;
  ConvBn<T> c1;
  ConvBn<T> c2;
  bool has_proj = false;
  ConvBn<T> proj;

  Tensor<T> forward(const Tensor<T>& x, bool training);
  void collect(std::vector<std::pair<std::string, Tensor<T>*>>& params,
               std::vector<std::pair<std::string, Tensor<T>*>>& buffers);
};

template <typename T>
struct ForwardOut {
  Tensor<T> logits;
  /// One entry per pooling site (locals in order, then global); undefined
  /// tensors at non-universal sites.
  std::vector<Tensor<T>> pool_pi;
  /// Feature map fed into each pooling site, same order.
  std::vector<Tensor<T>> pool_in;
};

template <typename T>
class Model {
 public:
  ModelConfig cfg;

  // VGG path: plain conv groups.
  std::vector<std::vector<ConvBn<T>>> groups;
  // ResNet path: stem plus residual stages.
  ConvBn<T> stem;
  std::vector<std::vector<BasicBlock<T>>> stages;

  std::vector<PoolSite<T>> pools;
  PoolSite<T> gpool;
  Tensor<T> fc_w, fc_b;

  ForwardOut<T> forward(const Tensor<T>& x, bool training);

  std::vector<std::pair<std::string, Tensor<T>*>> params();
  std::vector<std::pair<std::string, Tensor<T>*>> buffers();
  /// Local sites in order, then the global site.
  std::vector<PoolSite<T>*> sites();
  std::int64_t param_count();
};

/// Builds and initializes the configured network; throws ShapeError when the
/// input extent cannot feed every pooling site.
template <typename T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed);

extern template struct ConvBn<float>;
extern template struct ConvBn<double>;
extern template struct PoolSite<float>;
extern template struct PoolSite<double>;
extern template struct BasicBlock<float>;
extern template struct BasicBlock<double>;
extern template struct ForwardOut<float>;
extern template struct ForwardOut<double>;
extern template class Model<float>;
extern template class Model<double>;
extern template Model<float> build_model<float>(const ModelConfig&,
                                                std::uint64_t);
extern template Model<double> build_model<double>(const ModelConfig&,
                                                  std::uint64_t);

}  // namespace unipool
