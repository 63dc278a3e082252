#include <optional>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "unipool/errors.hpp"
#include "unipool/gradcheck.hpp"
#include "unipool/ops.hpp"

using namespace unipool;

TEST_SUITE("conv") {

TEST_CASE("forward matches the loop oracle across shapes") {
  Rng rng(31);
  int cases = 0;
  for (std::int64_t n : {1, 2})
    for (std::int64_t c : {1, 3})
      for (std::int64_t f : {1, 4})
        for (std::int64_t k : {1, 3})
          for (std::int64_t stride : {1, 2})
            for (std::int64_t pad : {0, 1}) {
              if (k == 1 && pad == 1) continue;
              const std::int64_t h = 6, w = 8;
              Tensor<double> x({n, c, h, w}), wt({f, c, k, k}), b({f});
              oracle::fill_normal(x, rng);
              oracle::fill_normal(wt, rng);
              oracle::fill_normal(b, rng);
              std::optional<Tensor<double>> bias(b);
              auto got = conv2d(x, wt, bias, stride, pad);
              auto want = oracle::conv2d(x, wt, bias, stride, pad, 1);
              REQUIRE(got.shape() == want.shape());
              CHECK(oracle::max_abs_diff(got, want) < 1e-12);
              ++cases;
            }
  CHECK(cases >= 40);
}

TEST_CASE("no-bias forward") {
  Rng rng(32);
  Tensor<double> x({2, 3, 5, 5}), w({4, 3, 3, 3});
  oracle::fill_normal(x, rng);
  oracle::fill_normal(w, rng);
  std::optional<Tensor<double>> none;
  CHECK(oracle::max_abs_diff(conv2d(x, w, none, 1, 1),
                             oracle::conv2d(x, w, none, 1, 1, 1)) < 1e-12);
}

TEST_CASE("grouped and depthwise forward") {
  Rng rng(33);
  for (std::int64_t groups : {2, 4}) {
    const std::int64_t c = 4, f = 8;
    Tensor<double> x({2, c, 6, 6}), w({f, c / groups, 3, 3}), b({f});
    oracle::fill_normal(x, rng);
    oracle::fill_normal(w, rng);
    oracle::fill_normal(b, rng);
    std::optional<Tensor<double>> bias(b);
    CHECK(oracle::max_abs_diff(conv2d(x, w, bias, 1, 1, groups),
                               oracle::conv2d(x, w, bias, 1, 1, groups)) <
          1e-12);
  }
  // Depthwise: one filter per input channel.
  Tensor<double> x({1, 3, 4, 4}), w({3, 1, 3, 3});
  oracle::fill_normal(x, rng);
  oracle::fill_normal(w, rng);
  std::optional<Tensor<double>> none;
  CHECK(oracle::max_abs_diff(conv2d(x, w, none, 1, 1, 3),
                             oracle::conv2d(x, w, none, 1, 1, 3)) < 1e-12);
}

TEST_CASE("shape violations throw") {
  Tensor<double> x({1, 3, 5, 5});
  std::optional<Tensor<double>> none;
  CHECK_THROWS_AS(conv2d(x, Tensor<double>({2, 4, 3, 3}), none, 1, 1),
                  ShapeError);
  CHECK_THROWS_AS(conv2d(x, Tensor<double>({2, 3, 3, 3}), none, 1, 1, 2),
                  ShapeError);
  CHECK_THROWS_AS(conv2d(x, Tensor<double>({1, 3, 7, 7}), none, 1, 0),
                  ShapeError);
  Tensor<double> w({2, 3, 3, 3}), bad_bias({3});
  std::optional<Tensor<double>> bb(bad_bias);
  CHECK_THROWS_AS(conv2d(x, w, bb, 1, 1), ShapeError);
}

TEST_CASE("gradients for input, weight and bias") {
  Rng rng(34);
  Tensor<double> x({2, 2, 5, 5}), w({3, 2, 3, 3}), b({3});
  oracle::fill_normal(x, rng);
  oracle::fill_normal(w, rng);
  oracle::fill_normal(b, rng);
  Tensor<double> k({2, 3, 3, 3});  // stride 2, pad 1 output is 3x3
  oracle::fill_normal(k, rng);

  GradCheckOptions opt;
  opt.max_probes = 300;
  auto rep = grad_check_fn(
      [&] {
        std::optional<Tensor<double>> bias(b);
        return sum(mul(k, conv2d(x, w, bias, 2, 1)));
      },
      {{"x", &x}, {"w", &w}, {"b", &b}}, opt);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("grouped gradients") {
  Rng rng(35);
  Tensor<double> x({1, 4, 4, 4}), w({4, 2, 3, 3});
  oracle::fill_normal(x, rng);
  oracle::fill_normal(w, rng);
  Tensor<double> k({1, 4, 4, 4});
  oracle::fill_normal(k, rng);
  GradCheckOptions opt;
  opt.max_probes = 250;
  auto rep = grad_check_fn(
      [&] {
        std::optional<Tensor<double>> none;
        return sum(mul(k, conv2d(x, w, none, 1, 1, 2)));
      },
      {{"x", &x}, {"w", &w}}, opt);
  CHECK(rep.max_rel_err < 1e-6);
}

}  // TEST_SUITE
