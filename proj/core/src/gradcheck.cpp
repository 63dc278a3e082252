#include "unipool/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "unipool/ops.hpp"
#include "unipool/tape.hpp"

namespace unipool {
namespace {

struct Eval {
  double loss;
  std::uint64_t trace;
};

Eval evaluate_once(const std::function<Tensor<double>()>& loss) {
  BranchTraceScope scope;
  Tensor<double> l = loss();
  return {l.item(), scope.hash()};
}

}  // namespace

double grad_rel_err(double analytic, double numeric, double denom_floor) {
  const double denom =
      std::max({denom_floor, std::fabs(analytic), std::fabs(numeric)});
  return std::fabs(analytic - numeric) / denom;
}

GradCheckReport grad_check_fn(
    const std::function<Tensor<double>()>& loss,
    std::vector<std::pair<std::string, Tensor<double>*>> probes,
    const GradCheckOptions& opt) {
  if (probes.empty()) throw UsageError("gradient check needs probe tensors");
  if (opt.step <= 0 || opt.max_probes < 1)
    throw UsageError("gradient check step and probe count must be positive");

  for (auto& [name, t] : probes) {
    if (t == nullptr || !t->defined())
      throw UsageError("gradient check probe \"" + name + "\" is missing");
    t->set_requires_grad(true);
    t->zero_grad();
  }

  // One recorded pass for the analytic gradients of every element.
  std::vector<std::vector<double>> analytic(probes.size());
  std::uint64_t base_trace;
  {
    Tape<double> tape;
    BranchTraceScope bscope;
    Tensor<double> l;
    {
      TapeScope<double> tscope(tape);
      l = loss();
    }
    tape.backward(l);
    base_trace = bscope.hash();
  }
  std::int64_t total = 0;
  for (std::size_t p = 0; p < probes.size(); ++p) {
    Tensor<double>* t = probes[p].second;
    if (t->has_grad()) {
      auto g = t->grad();
      analytic[p].assign(g.begin(), g.end());
    } else {
      analytic[p].assign(static_cast<std::size_t>(t->size()), 0.0);
    }
    t->zero_grad();
    total += t->size();
  }
  if (total == 0) throw UsageError("gradient check probe tensors are empty");

  // Element sample: everything when small, else a seeded draw without
  // replacement, probed in ascending order.
  std::vector<std::int64_t> chosen;
  if (total <= opt.max_probes) {
    chosen.resize(static_cast<std::size_t>(total));
    std::iota(chosen.begin(), chosen.end(), 0);
  } else {
    std::vector<std::int64_t> pool(static_cast<std::size_t>(total));
    std::iota(pool.begin(), pool.end(), 0);
    Rng rng(Rng::derive(opt.seed, 0x9dcbu));
    for (std::int64_t i = 0; i < opt.max_probes; ++i) {
      const std::uint64_t j =
          static_cast<std::uint64_t>(i) +
          rng.index(static_cast<std::uint64_t>(total - i));
      std::swap(pool[static_cast<std::size_t>(i)],
                pool[static_cast<std::size_t>(j)]);
    }
    chosen.assign(pool.begin(), pool.begin() + opt.max_probes);
    std::sort(chosen.begin(), chosen.end());
  }

  std::vector<std::int64_t> prefix(probes.size() + 1, 0);
  for (std::size_t p = 0; p < probes.size(); ++p)
    prefix[p + 1] = prefix[p] + probes[p].second->size();

  GradCheckReport report;
  std::size_t p = 0;
  for (std::int64_t global : chosen) {
    while (global >= prefix[p + 1]) ++p;
    const std::size_t elem = static_cast<std::size_t>(global - prefix[p]);
    Tensor<double>* t = probes[p].second;
    auto value = t->mut();
    const double orig = value[elem];

    value[elem] = orig + opt.step;
    const Eval hi = evaluate_once(loss);
    value[elem] = orig - opt.step;
    const Eval lo = evaluate_once(loss);
    value[elem] = orig;

    if (hi.trace != base_trace || lo.trace != base_trace) {
      ++report.skipped;
      continue;
    }
    const double numeric = (hi.loss - lo.loss) / (2.0 * opt.step);
    const double rel =
        grad_rel_err(analytic[p][elem], numeric, opt.denom_floor);
    ++report.checked;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_param = probes[p].first;
      report.worst_index = static_cast<std::int64_t>(elem);
      report.worst_analytic = analytic[p][elem];
      report.worst_numeric = numeric;
    }
  }

  const std::int64_t attempted = report.checked + report.skipped;
  if (attempted > 0 &&
      static_cast<double>(report.skipped) >
          opt.max_skip_fraction * static_cast<double>(attempted))
    throw NumericError(
        "gradient check skipped " + std::to_string(report.skipped) + " of " +
        std::to_string(attempted) +
        " probes on unstable branches; shrink the step or change the batch");
  return report;
}

GradCheckReport grad_check_model(Model<double>& model, const Batch& batch,
                                 const GradCheckOptions& opt) {
  // Training-mode loss drives the same backward path as real training.
  // Running stats are reset around every evaluation so each probe sees the
  // identical function.
  auto buffers = model.buffers();
  std::vector<std::vector<double>> snapshot;
  snapshot.reserve(buffers.size());
  for (auto& [name, t] : buffers) {
    auto v = t->data();
    snapshot.emplace_back(v.begin(), v.end());
  }
  auto restore = [&]() {
    for (std::size_t i = 0; i < buffers.size(); ++i) {
      auto dst = buffers[i].second->mut();
      std::copy(snapshot[i].begin(), snapshot[i].end(), dst.begin());
    }
  };

  auto loss = [&]() {
    ForwardOut<double> out = model.forward(batch.images, true);
    Tensor<double> l = cross_entropy(out.logits, batch.labels);
    restore();
    return l;
  };
  return grad_check_fn(loss, model.params(), opt);
}

}  // namespace unipool
