#include <cmath>
#include <functional>

#include "doctest.h"
#include "oracles.hpp"
#include "unipool/errors.hpp"
#include "unipool/gradcheck.hpp"
#include "unipool/ops.hpp"
#include "unipool/tape.hpp"

using namespace unipool;

TEST_SUITE("gradcheck") {

TEST_CASE("relative error uses a floored denominator") {
  CHECK(grad_rel_err(1.0, 1.0, 1e-2) == 0.0);
  CHECK(grad_rel_err(2.0, 1.0, 1e-2) == doctest::Approx(0.5));
  CHECK(grad_rel_err(0.0, 1e-9, 1e-2) == doctest::Approx(1e-7));
  CHECK(grad_rel_err(-1.0, 1.0, 1e-2) == doctest::Approx(2.0));
}

TEST_CASE("a smooth correct function passes tightly") {
  Rng rng(71);
  Tensor<double> x({20}), k({20});
  oracle::fill_normal(x, rng);
  oracle::fill_normal(k, rng);
  GradCheckOptions opt;
  auto rep = grad_check_fn(
      [&] { return sum(mul(k, mul(x, sigmoid(x)))); }, {{"x", &x}}, opt);
  CHECK(rep.checked == 20);
  CHECK(rep.skipped == 0);
  CHECK(rep.max_rel_err < 1e-7);
  CHECK(rep.worst_param == "x");
  CHECK(rep.worst_index >= 0);
}

TEST_CASE("a planted wrong gradient is caught") {
  // Forward computes sum(x^2) but the recorded backward claims 3x, not 2x.
  Tensor<double> x({4}, {1.0, -2.0, 0.5, 3.0});
  auto odd_square_sum = [&]() -> Tensor<double> {
    double acc = 0;
    for (auto v : x.data()) acc += v * v;
    Tensor<double> out({1}, {acc});
    if (auto* tape = Tape<double>::current(); tape && x.needs_grad()) {
      out.mark_in_graph();
      Tensor<double> xi = x;
      Tensor<double> oi = out;
      tape->record("odd_square_sum", [xi, oi]() {
        const double g = oi.grad()[0];
        auto gx = xi.grad_mut();
        for (std::int64_t i = 0; i < xi.size(); ++i)
          gx[static_cast<std::size_t>(i)] += g * 3.0 * xi.at(i);
      });
    }
    return out;
  };
  GradCheckOptions opt;
  auto rep = grad_check_fn(odd_square_sum, {{"x", &x}}, opt);
  CHECK(rep.max_rel_err > 0.3);
  CHECK(rep.worst_param == "x");
}

TEST_CASE("kinks inside the probe interval are skipped") {
  // One coordinate sits closer to the relu corner than the step.
  GradCheckOptions opt;
  opt.step = 1e-5;
  Tensor<double> x({3}, {1.0, opt.step / 2, -1.0});
  auto rep = grad_check_fn([&] { return sum(relu(x)); }, {{"x", &x}}, opt);
  CHECK(rep.checked == 2);
  CHECK(rep.skipped == 1);
  CHECK(rep.max_rel_err < 1e-9);
}

TEST_CASE("too many skips abort the check") {
  GradCheckOptions opt;
  opt.step = 1e-5;
  Tensor<double> x({4}, {opt.step / 2, -opt.step / 2, opt.step / 3, 0.0});
  CHECK_THROWS_AS(grad_check_fn([&] { return sum(relu(x)); }, {{"x", &x}}, opt),
                  NumericError);
}

TEST_CASE("probe sampling respects the cap deterministically") {
  Rng rng(72);
  Tensor<double> x({200});
  oracle::fill_normal(x, rng);
  GradCheckOptions opt;
  opt.max_probes = 32;
  auto a = grad_check_fn([&] { return sum(mul(x, x)); }, {{"x", &x}}, opt);
  auto b = grad_check_fn([&] { return sum(mul(x, x)); }, {{"x", &x}}, opt);
  CHECK(a.checked == 32);
  CHECK(b.checked == 32);
  CHECK(a.max_rel_err == b.max_rel_err);
  CHECK(a.worst_index == b.worst_index);
}

TEST_CASE("empty probe lists are a usage error") {
  GradCheckOptions opt;
  CHECK_THROWS_AS(
      grad_check_fn([] { return Tensor<double>::scalar(0.0); }, {}, opt),
      UsageError);
  CHECK_THROWS_AS(grad_check_fn([] { return Tensor<double>::scalar(0.0); },
                                {{"x", nullptr}}, opt),
                  UsageError);
  opt.max_probes = 0;
  Tensor<double> x({2});
  CHECK_THROWS_AS(grad_check_fn([&] { return sum(x); }, {{"x", &x}}, opt),
                  UsageError);
}

TEST_CASE("model-level check restores buffers and passes") {
  ModelConfig cfg;
  cfg.arch = Arch::kTinyVgg;
  cfg.local_pool = parse_pooling("universal:fc1");
  cfg.global_pool = parse_pooling("universal:fc2");
  cfg.num_classes = 3;
  cfg.image_size = 16;
  auto model = build_model<double>(cfg, 73);

  Batch batch;
  batch.images = Tensor<double>({2, 3, 16, 16});
  Rng rng(74);
  oracle::fill_normal(batch.images, rng);
  batch.labels = {0, 2};

  std::vector<Tensor<double>> before;
  for (auto& [name, t] : model.buffers()) before.push_back(t->clone());

  GradCheckOptions opt;
  opt.max_probes = 120;
  auto rep = grad_check_model(model, batch, opt);
  CHECK(rep.max_rel_err < 1e-5);
  CHECK(rep.checked > 100);

  // Probing ran training-mode forwards; stats must be back untouched.
  auto after = model.buffers();
  for (std::size_t i = 0; i < after.size(); ++i)
    for (std::int64_t j = 0; j < after[i].second->size(); ++j)
      CHECK(after[i].second->at(j) == before[i].at(j));
}

}  // TEST_SUITE
