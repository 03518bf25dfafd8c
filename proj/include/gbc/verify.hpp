#pragma once

// Numerical certification suites run by `gbc verify`. Each check reports a
// measured residual against its tolerance.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "gbc/qp_solver.hpp"

namespace gbc {

struct CheckResult {
  std::string suite;
  std::string name;
  bool passed = false;
  bool informational = false;  ///< reported only, never fails the run
  double value = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct VerifyOptions {
  std::string suite = "all";  ///< all | lemmas | theorems | solver
  std::uint64_t seed = 1;
  /// Test hook: flips the sign of the first off-diagonal pair of the
  /// predictive covariance used by the optimistic side of the
  /// DeePC / optimistic equivalence check, which must then fail.
  bool inject_bug = false;
  QpSettings solver;
  double rank_tol = 1e-10;
  double jitter_scale = 1e-9;
};

/// Throws ConfigError for an unknown suite name.
std::vector<CheckResult> verify(const VerifyOptions& options);

bool all_passed(const std::vector<CheckResult>& results);

/// One line per check: STATUS suite/name value <= tolerance (detail).
void print_report(const std::vector<CheckResult>& results, std::ostream& out);
nlohmann::json report_json(const std::vector<CheckResult>& results);

}  // namespace gbc
