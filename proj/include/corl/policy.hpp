#pragma once

#include <functional>
#include <string>
#include <vector>

#include "corl/adam.hpp"
#include "corl/backbone.hpp"
#include "corl/datastore.hpp"
#include "corl/ops.hpp"
#include "corl/param_store.hpp"
#include "corl/rng.hpp"
#include "corl/world.hpp"

namespace corl {

// Task heads are two-layer MLPs over the doubled feature width: the first
// half is the trunk feature, the second half is the composed context (zeros
// when a method does not compose). Keeping the width fixed lets a head

// trained without composition be reused as a warm start with it.
void head_init(ParamStore& store, const std::string& prefix, int h,
               int action_dim, Rng& rng);
std::vector<std::string> head_param_names(const std::string& prefix);

struct HeadCache {
  LinearCache c0, c1;
  Tensor relu_mask;
};

// x2h: [N, 2h] -> [N, action_dim]
Tensor head_forward(ParamStore& store, const std::string& prefix,
                    const Tensor& x2h, HeadCache* cache);
// Returns d(x2h), accumulates head parameter grads.
Tensor head_backward(ParamStore& store, const std::string& prefix,
                     const HeadCache& cache, const Tensor& dpred);

// [B,M,h] (+ optional [B,M,h] context; empty = zeros) -> [N, 2h]
Tensor pack_head_input(const Tensor& feat, const Tensor& compose);
// Splits d(x2h) back into the two halves, shaped [B,M,h].
void unpack_head_grad(const Tensor& dx2h, int B, int M, int h, Tensor* dfeat,
                      Tensor* dcompose);

// Optional extension points for the continual-learning methods; every hook
// may be left empty.
struct DtStepHooks {
  // Composed-context half for this batch (empty tensor = zero slot) and the
  // matching backward, which receives d(loss)/d(context).
  std::function<Tensor(const WindowBatch&)> compose_fwd;
  std::function<void(const Tensor&)> compose_bwd;
  // Zeroes the trunk-feature half of the head input (and skips the trunk
  // forward/backward entirely): the regime where only the composed context
  // and the head carry the policy.
  bool zero_feature_half = false;
  // Auxiliary loss over trunk features; may accumulate into dfeat.
  std::function<double(const WindowBatch&, const Tensor& feat, Tensor& dfeat)>
      feature_loss;
  // Parameter-space penalty; accumulates parameter grads, returns its loss.
  std::function<double()> param_penalty;
  // Runs after the backward pass, before the optimizer (gradient surgery).
  std::function<void()> post_backward;
};

// One supervised step on sampled windows: forward, masked action regression,
// hooks, backward, optimizer. Returns the total loss. Throws on non-finite
// loss so a diverging run fails loudly instead of training on garbage.
double dt_train_step(ParamStore& store, const BackboneConfig& cfg,
                     const BackboneBinding& bind, const std::string& head_prefix,
                     const EpisodeSet& data, int batch, Adam& opt,
                     Rng& sample_rng, Rng& drop_rng, const DtStepHooks& hooks);

struct EvalResult {
  double success_rate = 0.0;
  double mean_return = 0.0;
  bool nan_abort = false;  // some episode produced a non-finite action
};

using ComposeEvalFn = std::function<Tensor(const WindowBatch&)>;

// Deterministic batched rollout: all episodes advance in lockstep, each step
// re-filling a rolling window whose last slot is the current state (its
// action slot is a placeholder the causal mask keeps invisible). Actions are
// clipped by the environment; the return-to-go starts at target_return and
// decreases by the obtained rewards. A non-finite action fails that episode
// and sets nan_abort instead of throwing.
EvalResult eval_rollout(ParamStore& store, const BackboneConfig& cfg,
                        const BackboneBinding& bind,
                        const std::string& head_prefix,
                        const ComposeEvalFn& compose, const TaskSpec& task,
                        int episodes, uint64_t seed, double target_return,
                        bool zero_features = false);

}  // namespace corl
