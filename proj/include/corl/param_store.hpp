#pragma once

#include <map>
#include <string>
#include <vector>

#include "corl/rng.hpp"
#include "corl/tensor.hpp"

#include "json.hpp"

namespace corl {

struct Param {
  Tensor value;
  Tensor grad;
  bool trainable = true;
  // Per-element freeze mask; empty means nothing frozen. A set bit makes the
  // element invisible to the optimizer: value, moments, everything.
  std::vector<uint8_t> frozen;

  bool is_frozen(int64_t i) const {
    return !frozen.empty() && frozen[static_cast<size_t>(i)] != 0;
  }
  void ensure_freeze_mask() {
    if (frozen.empty()) frozen.assign(static_cast<size_t>(value.size()), 0);
  }
  void freeze_all() { frozen.assign(static_cast<size_t>(value.size()), 1); }
};

// Named parameter registry. std::map keeps iteration order deterministic,
// which every serialized artifact depends on.
class ParamStore {
 public:
  Param& add(const std::string& name, std::vector<int> shape);
  Param& add_uniform(const std::string& name, std::vector<int> shape, int fan_in,
                     Rng& rng);
  Param& get(const std::string& name);
  const Param& get(const std::string& name) const;
  bool has(const std::string& name) const { return params_.count(name) != 0; }
  void remove(const std::string& name);

  void zero_grads();
  std::vector<std::string> names() const;
  const std::map<std::string, Param>& all() const { return params_; }
  std::map<std::string, Param>& all() { return params_; }

  // Snapshot of current values for a name subset (regularizer anchors).
  std::map<std::string, Tensor> snapshot(const std::vector<std::string>& keys) const;

  nlohmann::json to_json() const;
  static ParamStore from_json(const nlohmann::json& j);

 private:
  std::map<std::string, Param> params_;
};

// Freeze-mask helpers shared by checkpoints and prune bookkeeping.
std::string pack_bits_hex(const std::vector<uint8_t>& bits);
std::vector<uint8_t> unpack_bits_hex(const std::string& hex, size_t n);

}  // namespace corl
