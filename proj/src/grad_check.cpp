#include "corl/grad_check.hpp"

#include <cmath>

namespace corl {

GradCheckResult grad_check(ParamStore& store, const std::vector<std::string>& names,
                           const std::function<double(bool with_grad)>& loss_fn,
                           double eps) {
  store.zero_grads();
  loss_fn(true);

  std::map<std::string, Tensor> analytic;
  for (const auto& n : names) analytic.emplace(n, store.get(n).grad);

  GradCheckResult res;
  for (const auto& n : names) {
    Param& p = store.get(n);
    const Tensor& a = analytic.at(n);
    for (int64_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + eps;
      const double fp = loss_fn(false);
      p.value[i] = saved - eps;
      const double fm = loss_fn(false);
      p.value[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double diff = std::fabs(a[i] - numeric);
      double rel = 0.0;
      if (diff >= 1e-8)
        rel = diff / std::max(std::fabs(a[i]), std::fabs(numeric));
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = n;
        res.worst_index = i;
        res.worst_analytic = a[i];
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace corl
