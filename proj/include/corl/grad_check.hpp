#pragma once

#include <functional>
#include <string>
#include <vector>

#include "corl/param_store.hpp"

namespace corl {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares backward-pass gradients against central finite differences.
// loss_fn(true) must run forward + backward and accumulate into Param::grad;
// loss_fn(false) must be a pure forward evaluation. Differences below 1e-8
// count as zero so that do-not-care entries (analytic exactly 0, numeric at
// noise floor) cannot dominate the relative error.
GradCheckResult grad_check(ParamStore& store, const std::vector<std::string>& names,
                           const std::function<double(bool with_grad)>& loss_fn,
                           double eps = 1e-5);

}  // namespace corl
