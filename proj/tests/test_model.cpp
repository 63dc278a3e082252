#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "unipool/errors.hpp"
#include "unipool/model.hpp"

using namespace unipool;

namespace {

// Independent parameter arithmetic mirroring the published layer plans.
struct Arith {
  std::int64_t total = 0;
  void conv_bn(std::int64_t cin, std::int64_t cout, std::int64_t k) {
    total += cout * cin * k * k + 2 * cout;  // weight + gamma/beta
  }
  void fc(std::int64_t in, std::int64_t out) { total += out * in + out; }
  void pool(const PoolingSpec& spec, std::int64_t c, std::int64_t s,
            bool global_site) {
    const std::int64_t s2 = s * s;
    const std::int64_t cw = spec.shared ? 1 : c;
    switch (spec.variant) {
      case PoolVariant::kMixed:
        total += 1;
        break;
      case PoolVariant::kGatedChannel:
        total += c * s2;
        break;
      case PoolVariant::kGatedLayer:
        total += s2;
        break;
      case PoolVariant::kUniversal:
        if (spec.b1 == B1Kind::kFc1) {
          total += cw * s2 * s2 + cw * s2;
        } else if (spec.b1 == B1Kind::kFc2) {
          const std::int64_t h =
              global_site ? std::max<std::int64_t>(1, s2 / 4) : s2;
          total += cw * h * s2 + cw * h + cw * s2 * h + cw * s2;
        } else {
          total += cw * 8 * 9 + cw * 8 * 9 + cw + 2 * (cw * 8);
        }
        break;
      default:
        break;
    }
  }
};

std::int64_t expected_tiny_vgg(const PoolingSpec& local,
                               const PoolingSpec& global,
                               std::int64_t classes, std::int64_t image) {
  const std::int64_t ch[] = {8, 16, 32, 64, 64};
  Arith a;
  std::int64_t cin = 3;
  std::int64_t extent = image;
  for (int g = 0; g < 5; ++g) {
    a.conv_bn(cin, ch[g], 3);
    cin = ch[g];
    if (g < 4) {
      a.pool(local, ch[g], 2, false);
      extent /= 2;
    }
  }
  a.pool(global, 64, extent, true);
  a.fc(64, classes);
  return a.total;
}

std::int64_t expected_tiny_resnet(const PoolingSpec& local,
                                  const PoolingSpec& global,
                                  std::int64_t classes, std::int64_t image) {
  const std::int64_t ch[] = {8, 16, 32, 64};
  Arith a;
  a.conv_bn(3, 8, 3);  // stem
  std::int64_t cin = 8;
  std::int64_t extent = image;
  for (int st = 0; st < 4; ++st) {
    a.conv_bn(cin, ch[st], 3);
    a.conv_bn(ch[st], ch[st], 3);
    if (cin != ch[st]) a.conv_bn(cin, ch[st], 1);  // projection
    cin = ch[st];
    if (st >= 1) {
      a.pool(local, ch[st], 2, false);
      extent /= 2;
    }
  }
  a.pool(global, 64, extent, true);
  a.fc(64, classes);
  return a.total;
}

ModelConfig tiny_cfg(Arch arch, const char* local, const char* global,
                     std::int64_t image = 32, std::int64_t classes = 10) {
  ModelConfig cfg;
  cfg.arch = arch;
  cfg.local_pool = parse_pooling(local);
  cfg.global_pool = parse_pooling(global);
  cfg.num_classes = classes;
  cfg.image_size = image;
  return cfg;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("arch names round trip") {
  for (const char* name : {"vgg", "resnet", "tiny-vgg", "tiny-resnet"})
    CHECK(format_arch(parse_arch(name)) == name);
  CHECK_THROWS_AS(parse_arch("alexnet"), UsageError);
  CHECK(is_tiny(Arch::kTinyVgg));
  CHECK(is_tiny(Arch::kTinyResNet));
  CHECK(!is_tiny(Arch::kVggCifar));
}

TEST_CASE("parameter counts match the layer arithmetic") {
  struct Case {
    const char* local;
    const char* global;
  };
  for (const Case& c : std::vector<Case>{{"max", "avg"},
                                         {"mixed", "mixed"},
                                         {"gated-ch", "gated-layer"},
                                         {"universal:fc1", "universal:fc2"},
                                         {"universal:fc2", "universal:conv"},
                                         {"universal:fc1+shared",
                                          "universal:conv+shared"}}) {
    auto vgg = build_model<double>(
        tiny_cfg(Arch::kTinyVgg, c.local, c.global), 1);
    CHECK(vgg.param_count() ==
          expected_tiny_vgg(parse_pooling(c.local), parse_pooling(c.global),
                            10, 32));
    auto res = build_model<double>(
        tiny_cfg(Arch::kTinyResNet, c.local, c.global), 1);
    CHECK(res.param_count() ==
          expected_tiny_resnet(parse_pooling(c.local), parse_pooling(c.global),
                               10, 32));
  }
}

TEST_CASE("forward emits the right shapes and site captures") {
  auto cfg = tiny_cfg(Arch::kTinyVgg, "universal:fc1", "universal:fc2", 16, 7);
  auto m = build_model<double>(cfg, 3);
  Tensor<double> x({2, 3, 16, 16});
  Rng rng(60);
  oracle::fill_normal(x, rng);

  auto out = m.forward(x, false);
  REQUIRE(out.logits.extent(0) == 2);
  REQUIRE(out.logits.extent(1) == 7);
  REQUIRE(out.pool_pi.size() == 5);  // 4 local + global
  REQUIRE(out.pool_in.size() == 5);
  // Feature extents halve at each local site: 16,8,4,2; global sees 1x1.
  CHECK(out.pool_in[0].extent(2) == 16);
  CHECK(out.pool_in[3].extent(2) == 2);
  CHECK(out.pool_in[4].extent(2) == 1);
  for (auto& pi : out.pool_pi) {
    REQUIRE(pi.defined());  // universal everywhere
    // Attention of a fresh site is uniform over its block.
  }
  CHECK(out.pool_pi[0].extent(2) == 16);
}

TEST_CASE("non-universal sites leave the attention slot undefined") {
  auto m = build_model<double>(tiny_cfg(Arch::kTinyResNet, "max", "avg"), 4);
  Tensor<double> x({1, 3, 32, 32});
  auto out = m.forward(x, false);
  REQUIRE(out.pool_pi.size() == 4);  // 3 local + global
  for (auto& pi : out.pool_pi) CHECK(!pi.defined());
}

TEST_CASE("input shape is validated") {
  auto m = build_model<double>(tiny_cfg(Arch::kTinyVgg, "max", "avg"), 5);
  CHECK_THROWS_AS(m.forward(Tensor<double>({1, 3, 16, 16}), false),
                  ShapeError);
  CHECK_THROWS_AS(m.forward(Tensor<double>({1, 1, 32, 32}), false),
                  ShapeError);
  CHECK_THROWS_AS(m.forward(Tensor<double>({3, 32, 32}), false), ShapeError);
}

TEST_CASE("too-small inputs cannot feed the pooling chain") {
  CHECK_THROWS_AS(
      build_model<double>(tiny_cfg(Arch::kTinyVgg, "max", "avg", 8), 1),
      ShapeError);
}

TEST_CASE("seeds control initialization") {
  auto cfg = tiny_cfg(Arch::kTinyResNet, "universal:fc2", "universal:fc2");
  auto a = build_model<double>(cfg, 7);
  auto b = build_model<double>(cfg, 7);
  auto c = build_model<double>(cfg, 8);
  auto pa = a.params(), pb = b.params(), pc = c.params();
  REQUIRE(pa.size() == pb.size());
  bool all_same = true, any_diff_c = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i].first == pb[i].first);
    for (std::int64_t j = 0; j < pa[i].second->size(); ++j) {
      if (pa[i].second->at(j) != pb[i].second->at(j)) all_same = false;
      if (pa[i].second->at(j) != pc[i].second->at(j)) any_diff_c = true;
    }
  }
  CHECK(all_same);
  CHECK(any_diff_c);
}

TEST_CASE("param names are unique and grads are armed") {
  auto m = build_model<double>(
      tiny_cfg(Arch::kTinyVgg, "universal:conv", "universal:fc1"), 2);
  auto params = m.params();
  std::vector<std::string> names;
  for (auto& [name, t] : params) {
    names.push_back(name);
    CHECK(t->requires_grad());
    CHECK(t->size() > 0);
  }
  std::sort(names.begin(), names.end());
  CHECK(std::adjacent_find(names.begin(), names.end()) == names.end());

  // Buffers (running stats) never require gradients.
  for (auto& [name, t] : m.buffers()) CHECK(!t->requires_grad());
}

TEST_CASE("training forward differs from eval once batch norm has state") {
  auto m = build_model<double>(tiny_cfg(Arch::kTinyResNet, "avg", "avg"), 9);
  Tensor<double> x({2, 3, 32, 32});
  Rng rng(61);
  oracle::fill_normal(x, rng);
  auto train_out = m.forward(x, true);  // folds batch stats into buffers
  auto eval_out = m.forward(x, false);
  double diff = 0;
  for (std::int64_t i = 0; i < train_out.logits.size(); ++i)
    diff = std::max(diff, std::abs(train_out.logits.at(i) -
                                   eval_out.logits.at(i)));
  CHECK(diff > 1e-8);
  for (std::int64_t i = 0; i < eval_out.logits.size(); ++i)
    CHECK(std::isfinite(eval_out.logits.at(i)));
}

TEST_CASE("sites lists locals then the global slot") {
  auto m = build_model<double>(
      tiny_cfg(Arch::kTinyVgg, "universal:fc1", "universal:fc2"), 1);
  auto sites = m.sites();
  REQUIRE(sites.size() == 5);
  CHECK(sites.back()->name == "gpool");
  for (std::size_t i = 0; i + 1 < sites.size(); ++i)
    CHECK(sites[i]->s == 2);
}

}  // TEST_SUITE
