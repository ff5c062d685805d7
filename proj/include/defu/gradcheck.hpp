#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "defu/autodiff.hpp"

namespace defu {

struct GradCheckOptions {
  double eps = 1e-4;
  /// Coordinates probed per tensor; 0 probes every coordinate.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
  /// Gradient-rule corruption applied to the analytic pass (negative
  /// controls): each listed op's contributions are scaled by the factor.
  std::vector<std::pair<ad::OpKind, double>> faults;
};

struct GradCheckResult {
  /// max |analytic - numeric| / max(1, |analytic|, |numeric|)
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

template <typename T>
using TapeFunction =
    std::function<ad::Var<T>(ad::Tape<T>&, const std::vector<ad::Var<T>>&)>;

/// Compares reverse-mode gradients of scalar `f` at `inputs` against central
/// differences. Inputs appear on the tape as leaves "input0", "input1", ...
template <typename T>
GradCheckResult grad_check(const TapeFunction<T>& f,
                           const std::vector<BasicTensor<T>>& inputs,
                           const GradCheckOptions& options = {});

/// Same comparison for parameters that `loss` reads through
/// Tape::parameter(). Parameters are perturbed in place and restored.
template <typename T>
GradCheckResult grad_check_parameters(
    const std::function<ad::Var<T>(ad::Tape<T>&)>& loss,
    std::span<ad::Parameter<T>* const> params,
    const GradCheckOptions& options = {});

/// Analytic gradient of coordinate `index` of the named parameter.
using AnalyticLookup = std::function<double(const std::string&, std::size_t)>;

/// Checks gradients computed elsewhere (for instance by a 32-bit model)
/// against central differences of the 64-bit `evaluate` over `params`.
GradCheckResult grad_check_reference(
    const std::function<double()>& evaluate,
    std::span<ad::Parameter<double>* const> params,
    const AnalyticLookup& analytic, const GradCheckOptions& options = {});

}  // namespace defu
