#pragma once

#include <functional>
#include <string>
#include <vector>

#include "motret/autodiff.hpp"

namespace motret {

struct GradCheckEntry {
  std::string name;
  long coord = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  GradCheckEntry worst;
  long coords_checked = 0;
  bool ok(double tol) const { return max_rel_err < tol; }
};

// Scalar-valued function that rebuilds its graph from the given leaves each
// time it is called; leaf values are perturbed in place for the differencing.
using LossFn = std::function<ad::Var(const std::vector<ad::Var>&)>;

// Central-difference check of d(fn)/d(leaf) for every leaf. When
// max_coords_per_leaf > 0, that many coordinates are sampled per leaf with
// `rng` (deterministic given the seed); otherwise all coordinates are checked.
GradCheckResult grad_check(const LossFn& fn, std::vector<ad::Var>& leaves,
                           const std::vector<std::string>& names, double eps = 1e-5,
                           int max_coords_per_leaf = -1, Rng* rng = nullptr);

}  // namespace motret
