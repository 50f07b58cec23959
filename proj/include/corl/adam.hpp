#pragma once

#include <map>
#include <string>

#include "corl/param_store.hpp"

#include "json.hpp"

namespace corl {

// Adam over a fixed set of parameter names. Frozen elements are skipped
// entirely: value, first and second moment all stay bit-identical.
class Adam {
 public:
  Adam(double lr = 1e-4, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Registers the parameters this optimizer owns. Must be called before step.
  void attach(const ParamStore& store, const std::vector<std::string>& names);

  void step(ParamStore& store);

  int64_t step_count() const { return t_; }
  double lr() const { return lr_; }
  const std::vector<std::string>& names() const { return names_; }

  nlohmann::json to_json() const;
  static Adam from_json(const nlohmann::json& j);

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<std::string> names_;
  std::map<std::string, Tensor> m_, v_;
};

// Zeroes gradients wherever the freeze mask is set. Kept as a separate op so
// masked training can be expressed as grad surgery even though the optimizer
// also honors freeze masks.
void zero_frozen_grads(ParamStore& store);

}  // namespace corl
