#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "corl/datastore.hpp"
#include "corl/ops.hpp"
#include "corl/param_store.hpp"
#include "corl/rng.hpp"
#include "corl/tensor.hpp"

namespace corl {

// Sequence model over interleaved (return-to-go, state, action) tokens with
// causal attention; the per-step feature is the transformer output at the
// state token, so a step's own action and all later steps are invisible to
// its prediction.
struct BackboneConfig {
  int layers = 2;
  int heads = 2;
  int h = 32;           // token width
  int state_dim = 6;
  int action_dim = 2;
  int window = 10;      // steps per training window
  int max_timestep = 50;  // time-embedding rows = max_timestep + 1; 0 is pad
  double dropout = 0.1;
  double rtg_scale = 50.0;  // return-to-go inputs are divided by this
};

// How a forward pass specializes the trunk: low-rank adapter pairs and/or
// weight-visibility masks, keyed by site name (e.g. "l0.mlp.W0"). Parameter
// names are resolved against `prefix` in the store.
struct BackboneBinding {
  std::string prefix = "bb.";
  std::map<std::string, std::pair<std::string, std::string>> adapters;
  std::map<std::string, const std::vector<uint8_t>*> masks;
};

struct BackboneLayerCache {
  LayerNormCache ln1, ln2;
  LinearCache wq, wk, wv, wo, w0, w1;
  AttentionCache att;
  Tensor q, k, v;      // attention inputs, [B, T, h]
  Tensor relu_mask;
  Tensor drop_attn, drop_mlp;  // dropout scales (empty when inactive)
};

struct BackboneCache {
  LinearCache emb_rtg, emb_state, emb_action;
  Tensor drop_tok;
  std::vector<BackboneLayerCache> layers;
  LayerNormCache lnf;
};

// Creates all trunk parameters under `prefix` (uniform +-1/sqrt(fan_in),
// layer-norm gains at one, biases at zero).
void backbone_init(ParamStore& store, const BackboneConfig& cfg,
                   const std::string& prefix, Rng& rng);

// All parameter names backbone_init creates, in creation order.
std::vector<std::string> backbone_param_names(const BackboneConfig& cfg,
                                              const std::string& prefix);
// The patchable linear sites ("l{i}.attn.Wq" ... "l{i}.mlp.W1").
std::vector<std::string> backbone_site_names(const BackboneConfig& cfg);
// Weight-matrix names eligible for magnitude pruning (prefix + site).
std::vector<std::string> backbone_trunk_weight_names(const BackboneConfig& cfg,
                                                     const std::string& prefix);

// Features at the state-token positions: [B, window, h]. Padded slots
// (timestep 0) are excluded as attention keys, so their values cannot reach
// real positions. cache == nullptr runs inference without saving caches;
// train enables dropout (requires dropout_rng when cfg.dropout > 0).
Tensor backbone_features(ParamStore& store, const BackboneConfig& cfg,
                         const BackboneBinding& bind, const WindowBatch& batch,
                         bool train, Rng* dropout_rng, BackboneCache* cache);

// Backprop dfeat [B, window, h] through the trunk, accumulating parameter
// grads (adapter grads where bound; masked-out weights get exactly zero).
void backbone_backward(ParamStore& store, const BackboneConfig& cfg,
                       const BackboneBinding& bind, const WindowBatch& batch,
                       const BackboneCache& cache, const Tensor& dfeat);

}  // namespace corl
