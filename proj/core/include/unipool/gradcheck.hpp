#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "unipool/branch_trace.hpp"
#include "unipool/data.hpp"
#include "unipool/model.hpp"

namespace unipool {

// Central-difference gradient verification, 64-bit only. Probes whose
// forward evaluations take different discrete branches (relu signs, argmax
// picks) across theta-h / theta / theta+h are skipped: the loss has a kink
// inside the interval and the difference quotient is meaningless there.

struct GradCheckReport {
  double max_rel_err = 0;
  std::int64_t checked = 0;
  std::int64_t skipped = 0;  // unstable branch pattern
  std::string worst_param;
  std::int64_t worst_index = -1;
  double worst_analytic = 0;
  double worst_numeric = 0;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-5;
  /// Parameter elements sampled per run.
  std::int64_t max_probes = 2000;
  /// Abort when more than this fraction of probes lands on a kink.
  double max_skip_fraction = 0.5;
  std::uint64_t seed = 1;
  /// Denominator floor for the relative error.
  double denom_floor = 1e-2;
};

/// rel_err = |analytic - numeric| / max(denom_floor, |analytic|, |numeric|).
double grad_rel_err(double analytic, double numeric, double denom_floor);

/// Checks d(loss)/d(theta) for sampled parameter elements of the model on
/// one batch. Runs the training-mode loss; batch-norm running stats are
/// snapshotted and restored around every evaluation so the probed function
/// is identical across probes.
GradCheckReport grad_check_model(Model<double>& model, const Batch& batch,
                                 const GradCheckOptions& opt);

/// Same procedure for a free function: loss() recomputes the scalar from the
/// current values of the probed tensors.
GradCheckReport grad_check_fn(const std::function<Tensor<double>()>& loss,
                              std::vector<std::pair<std::string, Tensor<double>*>> probes,
                              const GradCheckOptions& opt);

}  // namespace unipool
