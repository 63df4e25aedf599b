#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace uwbcs {

/// Oracle and invariant checks shared by `uwbsim selftest` and the
/// acceptance suite. Each compares the implementation against an independent
/// computation (finite differences, brute-force search, direct solves).
struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct CheckOptions {
  std::uint64_t seed = 20240611;
  int cases = 0;        // 0: the check's own default
  bool fault = false;   // corrupt the implementation side on purpose
};

/// Closed-form hyperparameter vs numerical maximization on a log grid.
CheckResult check_alpha_closed_form(const CheckOptions& options);
/// TDOA linearization rows vs central differences of the range differences.
CheckResult check_jacobian(const CheckOptions& options);
/// BCS posterior covariance identity and non-decreasing likelihood trace.
CheckResult check_bcs_consistency(const CheckOptions& options);
/// Square noiseless systems: every solver vs the direct linear solve.
CheckResult check_small_square(const CheckOptions& options);
/// 1-sparse underdetermined systems: OMP and BP vs exhaustive support search.
CheckResult check_small_sparse(const CheckOptions& options);
/// Sequential sampling: estimated/true arrival = K_r / K to within one bin.
CheckResult check_sequential_bias(const CheckOptions& options);

std::vector<std::string> selftest_names();

/// Runs one named check; throws InvalidArgument for unknown names.
CheckResult run_check(const std::string& name, const CheckOptions& options);

}  // namespace uwbcs
