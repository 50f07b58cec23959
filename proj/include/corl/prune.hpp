#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "corl/backbone.hpp"
#include "corl/param_store.hpp"

#include "json.hpp"

namespace corl {

// Iterative-pruning task packing over the trunk's six weight matrices per
// layer. Every weight element has an owner: 0 while free, otherwise the task
// that claimed it. Task k trains the free elements, claims the largest-
// magnitude fraction of them, zeroes the rest, and briefly retrains what it
// kept. Elements owned by earlier tasks are frozen but stay in the forward
// pass, so task i's network is reproduced exactly, at any later time, by
// masking to owners 1..i.
struct PruneBook {
  std::string prefix = "bb.";
  double keep_fraction = 0.3;
  std::map<std::string, std::vector<int>> owner;   // per weight element
  int tasks_claimed = 0;                           // highest owner assigned
  std::vector<std::pair<std::string, int>> exhausted;  // (tensor, task)

  nlohmann::json to_json() const;
  static PruneBook from_json(const nlohmann::json& j);
};

// Registers the trunk weight matrices (all elements free).
PruneBook prune_book_init(const BackboneConfig& cfg, const std::string& prefix,
                          double keep_fraction);

// Summary of one claim pass.
struct PruneClaim {
  std::map<std::string, int64_t> kept;  // elements claimed per tensor
  bool exhausted_any = false;           // some tensor had no free elements
};

// Magnitude-prunes the free elements for task k (must be tasks_claimed + 1):
// the keep_fraction share with the largest |value| — ties broken toward the
// lower flat index — become owned by k; the dropped ones stay free and are
// zeroed in the store so every still-visible network is unchanged.
PruneClaim prune_claim(PruneBook& book, ParamStore& store, int k);

int64_t prune_free_count(const PruneBook& book, const std::string& name);
// Visibility mask for task k's network: owner in [1, k].
std::vector<uint8_t> prune_visible_mask(const PruneBook& book,
                                        const std::string& name, int k);

// Caller-owned storage for binding masks (bindings hold raw pointers).
struct MaskSet {
  std::map<std::string, std::vector<uint8_t>> masks;
};

// Binding that evaluates task k's network: every registered tensor masked to
// owners 1..k. `storage` must outlive the binding.
BackboneBinding prune_binding(const PruneBook& book, int k, MaskSet& storage);

// Freeze configuration on the registered tensors. Training task k moves only
// free elements; retraining moves only the elements k just claimed.
void prune_freeze_for_training(const PruneBook& book, ParamStore& store);
void prune_freeze_for_retrain(const PruneBook& book, ParamStore& store, int k);

}  // namespace corl
