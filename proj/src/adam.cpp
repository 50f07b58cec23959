#include "corl/adam.hpp"

#include <algorithm>
#include <cmath>

namespace corl {

void Adam::attach(const ParamStore& store, const std::vector<std::string>& names) {
  names_ = names;
  std::sort(names_.begin(), names_.end());
  m_.clear();
  v_.clear();
  t_ = 0;
  for (const auto& n : names_) {
    const Param& p = store.get(n);
    CORL_CHECK(p.trainable, "optimizer attached to non-trainable parameter: " + n);
    m_.emplace(n, Tensor(p.value.shape));
    v_.emplace(n, Tensor(p.value.shape));
  }
}

void Adam::step(ParamStore& store) {
  CORL_CHECK(!names_.empty(), "optimizer has no attached parameters");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, double(t_));
  const double bc2 = 1.0 - std::pow(beta2_, double(t_));
  for (const auto& n : names_) {
    Param& p = store.get(n);
    auto mit = m_.find(n);
    CORL_CHECK(mit != m_.end(), "missing moment state for parameter: " + n);
    Tensor& m = mit->second;
    Tensor& v = v_.find(n)->second;
    CORL_CHECK(p.grad.size() == p.value.size(),
               "missing gradient for parameter: " + n);
    for (int64_t i = 0; i < p.value.size(); ++i) {
      if (p.is_frozen(i)) continue;
      const double g = p.grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

nlohmann::json Adam::to_json() const {
  nlohmann::json j;
  j["lr"] = lr_;
  j["beta1"] = beta1_;
  j["beta2"] = beta2_;
  j["eps"] = eps_;
  j["t"] = t_;
  j["names"] = names_;
  nlohmann::json jm = nlohmann::json::object(), jv = nlohmann::json::object();
  for (const auto& [n, t] : m_) jm[n] = t.v;
  for (const auto& [n, t] : v_) jv[n] = t.v;
  j["m"] = std::move(jm);
  j["v"] = std::move(jv);
  return j;
}

Adam Adam::from_json(const nlohmann::json& j) {
  Adam a(j.at("lr").get<double>(), j.at("beta1").get<double>(),
         j.at("beta2").get<double>(), j.at("eps").get<double>());
  a.t_ = j.at("t").get<int64_t>();
  a.names_ = j.at("names").get<std::vector<std::string>>();
  for (const auto& n : a.names_) {
    Tensor m, v;
    m.v = j.at("m").at(n).get<std::vector<double>>();
    m.shape = {int(m.v.size())};
    v.v = j.at("v").at(n).get<std::vector<double>>();
    v.shape = {int(v.v.size())};
    a.m_.emplace(n, std::move(m));
    a.v_.emplace(n, std::move(v));
  }
  return a;
}

void zero_frozen_grads(ParamStore& store) {
  for (auto& [name, p] : store.all()) {
    if (p.frozen.empty()) continue;
    for (int64_t i = 0; i < p.grad.size(); ++i)
      if (p.frozen[size_t(i)]) p.grad[i] = 0.0;
  }
}

}  // namespace corl
