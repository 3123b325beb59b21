#pragma once

#include <string>
#include <vector>

#include "motret/gradcheck.hpp"

namespace motret {

// One sweep of finite-difference gradient checks over every loss operation
// and both encoders, on small fixed instances. Used by the CLI `gradcheck`
// command and the acceptance harness.
struct GradSuiteEntry {
  std::string op;
  double max_rel_err = 0.0;
  long coords_checked = 0;
};

struct GradSuiteResult {
  std::vector<GradSuiteEntry> entries;
  double worst = 0.0;

  bool ok(double tol) const { return worst < tol; }
};

GradSuiteResult run_gradient_suite(uint64_t seed = 0);

}  // namespace motret
