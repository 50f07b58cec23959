#include "corl/param_store.hpp"

#include <cmath>

namespace corl {

Param& ParamStore::add(const std::string& name, std::vector<int> shape) {
  CORL_CHECK(!has(name), "parameter already registered: " + name);
  Param p;
  p.value = Tensor(shape);
  p.grad = Tensor(shape);
  auto [it, ok] = params_.emplace(name, std::move(p));
  (void)ok;
  return it->second;
}

Param& ParamStore::add_uniform(const std::string& name, std::vector<int> shape,
                               int fan_in, Rng& rng) {
  Param& p = add(name, std::move(shape));
  const double bound = 1.0 / std::sqrt(double(fan_in));
  for (int64_t i = 0; i < p.value.size(); ++i) p.value[i] = rng.uniform(-bound, bound);
  return p;
}

Param& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  CORL_CHECK(it != params_.end(), "unknown parameter: " + name);
  return it->second;
}

const Param& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  CORL_CHECK(it != params_.end(), "unknown parameter: " + name);
  return it->second;
}

void ParamStore::remove(const std::string& name) {
  CORL_CHECK(params_.erase(name) == 1, "unknown parameter: " + name);
}

void ParamStore::zero_grads() {
  for (auto& [name, p] : params_) p.grad.zero();
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, p] : params_) out.push_back(name);
  return out;
}

std::map<std::string, Tensor> ParamStore::snapshot(
    const std::vector<std::string>& keys) const {
  std::map<std::string, Tensor> out;
  for (const auto& k : keys) out.emplace(k, get(k).value);
  return out;
}

nlohmann::json ParamStore::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, p] : params_) {
    nlohmann::json e;
    e["shape"] = p.value.shape;
    e["values"] = p.value.v;
    e["trainable"] = p.trainable;
    if (!p.frozen.empty()) e["frozen"] = pack_bits_hex(p.frozen);
    j[name] = std::move(e);
  }
  return j;
}

ParamStore ParamStore::from_json(const nlohmann::json& j) {
  ParamStore s;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& e = it.value();
    Param& p = s.add(it.key(), e.at("shape").get<std::vector<int>>());
    auto vals = e.at("values").get<std::vector<double>>();
    CORL_CHECK(int64_t(vals.size()) == p.value.size(),
               "value count mismatch for " + it.key());
    p.value.v = std::move(vals);
    p.trainable = e.at("trainable").get<bool>();
    if (e.contains("frozen"))
      p.frozen = unpack_bits_hex(e["frozen"].get<std::string>(),
                                 static_cast<size_t>(p.value.size()));
  }
  return s;
}

std::string pack_bits_hex(const std::vector<uint8_t>& bits) {
  std::string out;
  out.reserve((bits.size() + 3) / 4);
  static const char* digits = "0123456789abcdef";
  for (size_t i = 0; i < bits.size(); i += 4) {
    int nib = 0;
    for (size_t k = 0; k < 4 && i + k < bits.size(); ++k)
      if (bits[i + k]) nib |= 1 << k;
    out.push_back(digits[nib]);
  }
  return out;
}

std::vector<uint8_t> unpack_bits_hex(const std::string& hex, size_t n) {
  CORL_CHECK(hex.size() == (n + 3) / 4, "packed mask length mismatch");
  std::vector<uint8_t> bits(n, 0);
  for (size_t i = 0; i < n; ++i) {
    char c = hex[i / 4];
    int nib = c <= '9' ? c - '0' : c - 'a' + 10;
    bits[i] = (nib >> (i % 4)) & 1;
  }
  return bits;
}

}  // namespace corl
