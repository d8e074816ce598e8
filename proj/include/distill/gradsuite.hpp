#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "distill/gradcheck.hpp"

namespace distill {

struct SuiteOptions {
  std::size_t seeds = 20;
  std::uint64_t base_seed = 0;
  double tolerance = 1e-5;
  double eps = 1e-5;
  /// Adds a case whose backward is deliberately wrong; the suite must fail.
  bool inject_fault = false;
};

struct SuiteCase {
  std::string name;
  std::size_t seeds_passed = 0;
  std::size_t seeds_run = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  bool passed() const { return seeds_passed == seeds_run; }
};

struct SuiteReport {
  std::vector<SuiteCase> cases;
  double tolerance = 0.0;
  bool passed() const;
};

/// Names of the cases run_gradient_suite covers, in report order.
std::vector<std::string> gradient_suite_cases(bool inject_fault = false);

/// Checks every loss and layer against central differences on seeded random inputs.
SuiteReport run_gradient_suite(const SuiteOptions& options);

}  // namespace distill
