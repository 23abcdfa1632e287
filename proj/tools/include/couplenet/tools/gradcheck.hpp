#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace couplenet::tools {

/// One finite-difference comparison row: an operator (or operator variant)
/// checked over one or more random cases.
struct GradcheckResult {
  std::string suite;
  std::string op;
  std::size_t entries = 0;     ///< gradient entries compared
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;  ///< over entries with max(|analytic|, |numeric|) > abs_floor
  double rel_tol = 0.0;
  double abs_floor = 0.0;
  bool passed = true;
};

struct GradcheckOptions {
  /// Suite name, group name ("nn", "roi", "coupling") or "all".
  std::string scope = "all";
  /// Test hook: op name whose analytic gradient is perturbed before comparison.
  std::string corrupt_op;
  std::uint64_t seed = 20240611;
};

/// Suite names in execution order.
std::vector<std::string> gradcheck_suites();

/// Throws std::invalid_argument for an unknown scope.
std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& options);

/// Fixed-width table, one line per result, followed by a summary line.
std::string format_gradcheck(const std::vector<GradcheckResult>& results);

}  // namespace couplenet::tools
