#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "defu/gradcheck.hpp"

namespace defu {

struct SuiteEntry {
  std::string name;
  std::vector<ad::OpKind> covers;  ///< registry ops this entry exercises
  bool forward_only = false;       ///< checks rejection instead of gradients
  double tolerance = 0;
  GradCheckResult result;
  bool passed = false;
  std::string note;
  double seconds = 0;
};

struct SuiteOptions {
  std::vector<std::pair<ad::OpKind, double>> faults;
  bool include_model = true;  ///< full-model f64 and f32 checks
  std::uint64_t seed = 0;
  /// Only run entries whose name contains this substring (empty: all).
  std::string filter;
};

inline constexpr double kGradTolerance64 = 1e-6;
inline constexpr double kGradTolerance32 = 1e-3;

/// Finite-difference checks of every registered primitive (64-bit), every
/// composite block (64-bit, 1x4x8x8 input), the full model with dice loss on
/// a 1x1x16x16 input (64-bit) and an end-to-end 32-bit model check.
std::vector<SuiteEntry> run_gradcheck_suite(
    const SuiteOptions& options,
    const std::function<void(const SuiteEntry&)>& on_entry = {});

/// Number of distinct registry ops covered by primitive-level entries.
std::size_t registry_coverage(const std::vector<SuiteEntry>& entries);

}  // namespace defu
