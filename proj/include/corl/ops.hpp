#pragma once

#include <vector>

#include "corl/param_store.hpp"
#include "corl/rng.hpp"
#include "corl/tensor.hpp"

namespace corl {

// A linear map site in the network, with the two ways a task can specialize
// it: a low-rank adapter pair (y += x A^T B^T) or a per-element weight mask
// (y = (mask .* W) x). Sites are cheap per-call views; parameter ownership
// stays in the ParamStore.
struct LinearSite {
  Param* W = nullptr;
  Param* b = nullptr;
  Param* A = nullptr;  // [r, in]
  Param* B = nullptr;  // [out, r]
  const std::vector<uint8_t>* mask = nullptr;  // over W elements, 1 = visible
};

struct LinearCache {
  Tensor x;     // [N, in]
  Tensor xAt;   // [N, r] when adapter present
  Tensor weff;  // materialized masked weights when mask present
};

// x: [N, in] -> [N, out]. cache may be null for inference-only calls.
Tensor linear_forward(const LinearSite& s, const Tensor& x, LinearCache* cache);
// Returns dx, accumulates grads into W/b/A/B. Masked-out weight elements
// receive exactly zero gradient.
Tensor linear_backward(const LinearSite& s, const LinearCache& cache,
                       const Tensor& dy);

// ----------------------------- layer norm -----------------------------

struct LayerNormCache {
  Tensor xhat;  // [N, D]
  Tensor rstd;  // [N]
};

Tensor layernorm_forward(const Param& gain, const Param& bias, const Tensor& x,
                         LayerNormCache* cache);
Tensor layernorm_backward(Param& gain, Param& bias, const LayerNormCache& cache,
                          const Tensor& dy);

// ----------------------------- relu -----------------------------

Tensor relu_forward(const Tensor& x, Tensor* mask_cache);
Tensor relu_backward(const Tensor& mask, const Tensor& dy);

// ----------------------------- dropout -----------------------------

// Inverted dropout; cache stores the applied scale per element (0 or 1/(1-p)).
Tensor dropout_forward(const Tensor& x, double p, Rng& rng, Tensor* scale_cache);
Tensor dropout_backward(const Tensor& scale, const Tensor& dy);

// ----------------------------- attention -----------------------------

struct AttentionCache {
  Tensor att;  // [B, nh, T, T]; entries past the diagonal or at invalid keys
               // are exactly zero
};

// Causal multi-head self-attention mixing. q,k,v: [B, T, h]. key_valid, when
// given, holds one byte per (batch, position); invalid positions are skipped
// as keys so padding cannot leak into real positions. A query always keeps
// its own position as a key, which keeps padded query rows finite.
Tensor attention_forward(const Tensor& q, const Tensor& k, const Tensor& v,
                         int n_heads, const std::vector<uint8_t>* key_valid,
                         AttentionCache* cache);
void attention_backward(const AttentionCache& cache, const Tensor& q,
                        const Tensor& k, const Tensor& v, int n_heads,
                        const Tensor& dout, Tensor& dq, Tensor& dk, Tensor& dv);

// ----------------------------- losses -----------------------------

// Mean over unmasked positions of the squared L2 action error. mask is one
// byte per position (B*M); errors if every position is masked out.
double masked_mse(const Tensor& pred, const Tensor& target,
                  const std::vector<uint8_t>& mask, Tensor* dpred);

// ----------------------------- softmax -----------------------------

std::vector<double> softmax(const std::vector<double>& logits);
// dlogits given dprobs for a softmax output p.
std::vector<double> softmax_backward(const std::vector<double>& p,
                                     const std::vector<double>& dp);

}  // namespace corl
