#include "motret/gradcheck.hpp"

#include <cmath>

#include "motret/common.hpp"

namespace motret {

GradCheckResult grad_check(const LossFn& fn, std::vector<ad::Var>& leaves,
                           const std::vector<std::string>& names, double eps,
                           int max_coords_per_leaf, Rng* rng) {
  check_data(names.size() == leaves.size(), "grad_check: one name per leaf required");
  for (auto& l : leaves) l.zero_grad();

  ad::Var loss = fn(leaves);
  check_numeric(loss.value().numel() == 1, "grad_check: fn must return a scalar");
  check_numeric(loss.value().all_finite(), "grad_check: non-finite loss");
  ad::backward(loss);
  // Differencing noise on a near-zero gradient is ~|f|*ulp/eps; absolute
  // agreement below this scaled floor counts as a match.
  const double atol = 1e-8 * std::max(1.0, std::fabs(loss.value()[0]));

  std::vector<Tensor> analytic;
  analytic.reserve(leaves.size());
  for (auto& l : leaves)
    analytic.push_back(l.has_grad() ? l.grad() : Tensor::zeros(l.value().shape()));

  GradCheckResult res;
  for (size_t li = 0; li < leaves.size(); ++li) {
    Tensor& vals = leaves[li].mutable_value();
    const long n = vals.numel();

    std::vector<long> coords;
    if (max_coords_per_leaf > 0 && n > max_coords_per_leaf && rng != nullptr) {
      for (int k = 0; k < max_coords_per_leaf; ++k)
        coords.push_back(static_cast<long>(rng->uniform_int(static_cast<uint64_t>(n))));
    } else {
      coords.resize(static_cast<size_t>(n));
      for (long i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    }

    for (long c : coords) {
      const double saved = vals[c];
      vals[c] = saved + eps;
      const double fp = fn(leaves).value()[0];
      vals[c] = saved - eps;
      const double fm = fn(leaves).value()[0];
      vals[c] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[li][c];
      const double adiff = std::fabs(a - numeric);
      const double rel =
          adiff <= atol ? 0.0 : adiff / std::max({std::fabs(a), std::fabs(numeric), 1e-6});
      ++res.coords_checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = {names[li], c, a, numeric, rel};
      }
    }
  }
  return res;
}

}  // namespace motret
