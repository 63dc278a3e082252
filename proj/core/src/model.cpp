#include "unipool/model.hpp"

#include <cmath>
#include <string>

namespace unipool {
namespace {

struct VggPlan {
  std::vector<int> convs_per_group;
  std::vector<std::int64_t> channels;
};
struct ResNetPlan {
  std::vector<int> blocks_per_stage;
  std::vector<std::int64_t> channels;
};

VggPlan vgg_plan(Arch arch) {
  if (arch == Arch::kVggCifar)
    return {{2, 2, 4, 4, 4}, {64, 128, 256, 512, 512}};
  return {{1, 1, 1, 1, 1}, {8, 16, 32, 64, 64}};
}

ResNetPlan resnet_plan(Arch arch) {
  if (arch == Arch::kResNetCifar) return {{2, 2, 2, 2}, {64, 128, 256, 512}};
  return {{1, 1, 1, 1}, {8, 16, 32, 64}};
}

template <typename T>
void he_uniform(Tensor<T>& t, std::int64_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t.mut()) v = static_cast<T>(rng.uniform(-limit, limit));
}

template <typename T>
void fc_uniform(Tensor<T>& t, std::int64_t fan_in, Rng& rng) {
  const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.mut()) v = static_cast<T>(rng.uniform(-limit, limit));
}

template <typename T>
ConvBn<T> make_conv(const std::string& name, std::int64_t cin,
                    std::int64_t cout, std::int64_t k, std::int64_t stride,
                    std::int64_t pad, bool relu_after, Rng& rng) {
  ConvBn<T> conv;
  conv.name = name;
  conv.w = Tensor<T>({cout, cin, k, k});
  he_uniform(conv.w, cin * k * k, rng);
  conv.w.set_requires_grad(true);
  conv.gamma = Tensor<T>::full({cout}, T(1));
  conv.gamma.set_requires_grad(true);
  conv.beta = Tensor<T>::zeros({cout});
  conv.beta.set_requires_grad(true);
  conv.stats = BnStats<T>(cout);
  conv.stride = stride;
  conv.pad = pad;
  conv.relu_after = relu_after;
  return conv;
}

/// fc2 width: block entries at a local site, a quarter of them at the global
/// site (where one block covers the whole map).
std::int64_t fc2_hidden(std::int64_t s, bool global_site) {
  const std::int64_t s2 = s * s;
  return global_site ? std::max<std::int64_t>(1, s2 / 4) : s2;
}

template <typename T>
PoolSite<T> make_site(const std::string& name, const PoolingSpec& spec,
                      std::int64_t channels, std::int64_t s, bool global_site,
                      Rng& rng) {
  PoolSite<T> site;
  site.name = name;
  site.spec = spec;
  site.s = s;
  switch (spec.variant) {
    case PoolVariant::kMixed:
      site.mix_logit = Tensor<T>::zeros({1});
      site.mix_logit.set_requires_grad(true);
      break;
    case PoolVariant::kGatedChannel:
      site.gate_omega = Tensor<T>::zeros({channels, s * s});
      site.gate_omega.set_requires_grad(true);
      break;
    case PoolVariant::kGatedLayer:
      site.gate_omega = Tensor<T>::zeros({1, s * s});
      site.gate_omega.set_requires_grad(true);
      break;
    case PoolVariant::kUniversal:
      site.uni = make_universal<T>(
          spec.b1, channels, s, spec.shared, rng,
          spec.b1 == B1Kind::kFc2 ? fc2_hidden(s, global_site) : 0);
      break;
    default:
      break;
  }
  return site;
}

}  // namespace

Arch parse_arch(const std::string& text) {
  if (text == "vgg") return Arch::kVggCifar;
  if (text == "resnet") return Arch::kResNetCifar;
  if (text == "tiny-vgg") return Arch::kTinyVgg;
  if (text == "tiny-resnet") return Arch::kTinyResNet;
  throw UsageError("unknown architecture \"" + text +
                   "\" (expected vgg|resnet|tiny-vgg|tiny-resnet)");
}

std::string format_arch(Arch arch) {
  switch (arch) {
    case Arch::kVggCifar: return "vgg";
    case Arch::kResNetCifar: return "resnet";
    case Arch::kTinyVgg: return "tiny-vgg";
    case Arch::kTinyResNet: return "tiny-resnet";
  }
  return "?";
}

bool is_tiny(Arch arch) {
  return arch == Arch::kTinyVgg || arch == Arch::kTinyResNet;
}

template <typename T>
Tensor<T> ConvBn<T>::forward(const Tensor<T>& x, bool training) {
  Tensor<T> y = conv2d(x, w, std::optional<Tensor<T>>{}, stride, pad, 1);
  y = batch_norm(y, gamma, beta, stats, training);
  return relu_after ? relu(y) : y;
}

template <typename T>
void ConvBn<T>::collect(
    std::vector<std::pair<std::string, Tensor<T>*>>& params,
    std::vector<std::pair<std::string, Tensor<T>*>>& buffers) {
  params.emplace_back(name + ".weight", &w);
  params.emplace_back(name + ".bn.gamma", &gamma);
  params.emplace_back(name + ".bn.beta", &beta);
  buffers.emplace_back(name + ".bn.mean", &stats.mean);
  buffers.emplace_back(name + ".bn.var", &stats.var);
}

template <typename T>
Tensor<T> PoolSite<T>::forward(const Tensor<T>& x, bool training,
                               Tensor<T>* pi_out) {
  switch (spec.variant) {
    case PoolVariant::kMax: return max_pool(x, s);
    case PoolVariant::kAvg: return avg_pool(x, s);
    case PoolVariant::kStride:
      return stride_pool(x, s, spec.offset_row, spec.offset_col);
    case PoolVariant::kMixed: return mixed_pool(x, mix_logit, s);
    case PoolVariant::kGatedChannel: return gated_pool(x, gate_omega, s, true);
    case PoolVariant::kGatedLayer: return gated_pool(x, gate_omega, s, false);
    case PoolVariant::kUniversal: {
      UniversalOut<T> u = universal_pool(x, uni, training);
      if (pi_out) *pi_out = u.pi;
      return u.o;
    }
  }
  throw ShapeError("pool site " + name + ": bad variant");
}

template <typename T>
void PoolSite<T>::collect(
    std::vector<std::pair<std::string, Tensor<T>*>>& params,
    std::vector<std::pair<std::string, Tensor<T>*>>& buffers) {
  switch (spec.variant) {
    case PoolVariant::kMixed:
      params.emplace_back(name + ".mix.logit", &mix_logit);
      break;
    case PoolVariant::kGatedChannel:
    case PoolVariant::kGatedLayer:
      params.emplace_back(name + ".gate.omega", &gate_omega);
      break;
    case PoolVariant::kUniversal: {
      for (auto& p : uni.named_params(name + ".b1")) params.push_back(p);
      for (auto& p : uni.named_buffers(name + ".b1")) buffers.push_back(p);
      break;
    }
    default:
      break;
  }
}

template <typename T>
Tensor<T> BasicBlock<T>::forward(const Tensor<T>& x, bool training) {
  Tensor<T> y = c1.forward(x, training);
  y = c2.forward(y, training);
  Tensor<T> shortcut = has_proj ? proj.forward(x, training) : x;
  return relu(add(y, shortcut));
}

template <typename T>
void BasicBlock<T>::collect(
    std::vector<std::pair<std::string, Tensor<T>*>>& params,
    std::vector<std::pair<std::string, Tensor<T>*>>& buffers) {
  c1.collect(params, buffers);
  c2.collect(params, buffers);
  if (has_proj) proj.collect(params, buffers);
}

template <typename T>
ForwardOut<T> Model<T>::forward(const Tensor<T>& x, bool training) {
  if (x.shape().size() != 4 || x.extent(1) != cfg.in_channels ||
      x.extent(2) != cfg.image_size || x.extent(3) != cfg.image_size)
    throw ShapeError("model expects [N," + std::to_string(cfg.in_channels) +
                     "," + std::to_string(cfg.image_size) + "," +
                     std::to_string(cfg.image_size) + "], got " +
                     shape_str(x.shape()));
  ForwardOut<T> out;
  out.pool_pi.resize(pools.size() + 1);
  out.pool_in.resize(pools.size() + 1);
  Tensor<T> y = x;
  if (cfg.arch == Arch::kVggCifar || cfg.arch == Arch::kTinyVgg) {
    for (std::size_t g = 0; g < groups.size(); ++g) {
      for (auto& conv : groups[g]) y = conv.forward(y, training);
      if (g < pools.size()) {
        out.pool_in[g] = y;
        y = pools[g].forward(y, training, &out.pool_pi[g]);
      }
    }
  } else {
    y = stem.forward(y, training);
    for (std::size_t st = 0; st < stages.size(); ++st) {
      for (std::size_t b = 0; b < stages[st].size(); ++b) {
        y = stages[st][b].forward(y, training);
        if (st >= 1 && b == 0) {
          out.pool_in[st - 1] = y;
          y = pools[st - 1].forward(y, training, &out.pool_pi[st - 1]);
        }
      }
    }
  }
  out.pool_in[pools.size()] = y;
  y = gpool.forward(y, training, &out.pool_pi[pools.size()]);
  y = y.reshape({y.extent(0), y.extent(1)});
  out.logits = linear(y, fc_w, fc_b);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> Model<T>::params() {
  std::vector<std::pair<std::string, Tensor<T>*>> p, b;
  if (cfg.arch == Arch::kVggCifar || cfg.arch == Arch::kTinyVgg) {
    for (std::size_t g = 0; g < groups.size(); ++g) {
      for (auto& conv : groups[g]) conv.collect(p, b);
      if (g < pools.size()) pools[g].collect(p, b);
    }
  } else {
    stem.collect(p, b);
    for (std::size_t st = 0; st < stages.size(); ++st)
      for (std::size_t blk = 0; blk < stages[st].size(); ++blk) {
        stages[st][blk].collect(p, b);
        if (st >= 1 && blk == 0) pools[st - 1].collect(p, b);
      }
  }
  gpool.collect(p, b);
  p.emplace_back("fc.weight", &fc_w);
  p.emplace_back("fc.bias", &fc_b);
  return p;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> Model<T>::buffers() {
  std::vector<std::pair<std::string, Tensor<T>*>> p, b;
  if (cfg.arch == Arch::kVggCifar || cfg.arch == Arch::kTinyVgg) {
    for (std::size_t g = 0; g < groups.size(); ++g) {
      for (auto& conv : groups[g]) conv.collect(p, b);
      if (g < pools.size()) pools[g].collect(p, b);
    }
  } else {
    stem.collect(p, b);
    for (std::size_t st = 0; st < stages.size(); ++st)
      for (std::size_t blk = 0; blk < stages[st].size(); ++blk) {
        stages[st][blk].collect(p, b);
        if (st >= 1 && blk == 0) pools[st - 1].collect(p, b);
      }
  }
  gpool.collect(p, b);
  return b;
}

template <typename T>
std::vector<PoolSite<T>*> Model<T>::sites() {
  std::vector<PoolSite<T>*> out;
  for (auto& s : pools) out.push_back(&s);
  out.push_back(&gpool);
  return out;
}

template <typename T>
std::int64_t Model<T>::param_count() {
  std::int64_t n = 0;
  for (auto& [name, t] : params()) n += t->size();
  return n;
}

template <typename T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.num_classes < 2)
    throw ShapeError("model needs at least 2 classes");
  Rng rng(Rng::derive(seed, 0xa11c));
  Model<T> m;
  m.cfg = cfg;
  std::int64_t e = cfg.image_size;
  auto want_pool = [&](std::int64_t s, const std::string& site) {
    if (e < s)
      throw ShapeError("spatial extent " + std::to_string(e) +
                       " underflows block " + std::to_string(s) + " at " +
                       site);
  };
  if (cfg.arch == Arch::kVggCifar || cfg.arch == Arch::kTinyVgg) {
    const VggPlan plan = vgg_plan(cfg.arch);
    std::int64_t cin = cfg.in_channels;
    for (std::size_t g = 0; g < plan.channels.size(); ++g) {
      std::vector<ConvBn<T>> convs;
      for (int i = 0; i < plan.convs_per_group[g]; ++i) {
        const std::string name = "conv" + std::to_string(g + 1) + "_" +
                                 std::to_string(i + 1);
        convs.push_back(
            make_conv<T>(name, cin, plan.channels[g], 3, 1, 1, true, rng));
        cin = plan.channels[g];
      }
      m.groups.push_back(std::move(convs));
      if (g + 1 < plan.channels.size()) {
        const std::string name = "pool" + std::to_string(g + 1);
        want_pool(2, name);
        m.pools.push_back(
            make_site<T>(name, cfg.local_pool, plan.channels[g], 2, false,
                         rng));
        e /= 2;
      }
    }
    want_pool(1, "gpool");
    m.gpool = make_site<T>("gpool", cfg.global_pool, plan.channels.back(), e,
                           true, rng);
    m.fc_w = Tensor<T>({cfg.num_classes, plan.channels.back()});
  } else {
    const ResNetPlan plan = resnet_plan(cfg.arch);
    m.stem = make_conv<T>("conv1", cfg.in_channels, plan.channels[0], 3, 1, 1,
                          true, rng);
    std::int64_t cin = plan.channels[0];
    for (std::size_t st = 0; st < plan.channels.size(); ++st) {
      std::vector<BasicBlock<T>> blocks;
      for (int blk = 0; blk < plan.blocks_per_stage[st]; ++blk) {
        const std::string name = "block" + std::to_string(st + 2) + "_" +
                                 std::to_string(blk + 1);
        BasicBlock<T> block;
        block.name = name;
        const std::int64_t cout = plan.channels[st];
        block.c1 = make_conv<T>(name + ".conv1", cin, cout, 3, 1, 1, true, rng);
        block.c2 =
            make_conv<T>(name + ".conv2", cout, cout, 3, 1, 1, false, rng);
        if (cin != cout) {
          block.has_proj = true;
          block.proj =
              make_conv<T>(name + ".proj", cin, cout, 1, 1, 0, false, rng);
        }
        cin = cout;
        blocks.push_back(std::move(block));
        if (st >= 1 && blk == 0) {
          const std::string pname = "pool" + std::to_string(st);
          want_pool(2, pname);
          m.pools.push_back(
              make_site<T>(pname, cfg.local_pool, cout, 2, false, rng));
          e /= 2;
        }
      }
      m.stages.push_back(std::move(blocks));
    }
    want_pool(1, "gpool");
    m.gpool = make_site<T>("gpool", cfg.global_pool, plan.channels.back(), e,
                           true, rng);
    m.fc_w = Tensor<T>({cfg.num_classes, plan.channels.back()});
  }
  fc_uniform(m.fc_w, m.fc_w.extent(1), rng);
  m.fc_w.set_requires_grad(true);
  m.fc_b = Tensor<T>::zeros({cfg.num_classes});
  fc_uniform(m.fc_b, m.fc_w.extent(1), rng);
  m.fc_b.set_requires_grad(true);
  return m;
}

#define UNIPOOL_INST_MODEL(T)                                          \
  template struct ConvBn<T>;                                           \
  template struct PoolSite<T>;                                         \
  template struct BasicBlock<T>;                                       \
  template struct ForwardOut<T>;                                       \
  template class Model<T>;                                             \
  template Model<T> build_model<T>(const ModelConfig&, std::uint64_t);

UNIPOOL_INST_MODEL(float)
UNIPOOL_INST_MODEL(double)
#undef UNIPOOL_INST_MODEL

}  // namespace unipool
