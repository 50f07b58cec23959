#pragma once

#include <map>
#include <string>
#include <vector>

#include "corl/backbone.hpp"
#include "corl/param_store.hpp"
#include "corl/policy.hpp"
#include "corl/rng.hpp"
#include "corl/world.hpp"

namespace corl {

// How a task's head receives context from earlier policies.
enum class ComposeMode {
  kAttentive,   // attention over prior features, driven by task-text queries
  kDirectAdd,   // unweighted sum of prior features
  kLayerShare,  // the shared trunk's own features fill the context slot
  kNone,        // context stays zero
};

ComposeMode compose_mode_from_string(const std::string& s);
std::string to_string(ComposeMode mode);

struct ComposerConfig {
  int text_dim = 64;       // task-text embedding width d
  double eta = 0.8;        // reuse threshold on eval success
  int warmup_iters = 400;  // context-only training budget per task
  ComposeMode mode = ComposeMode::kAttentive;
};

// ----------------------------- embeddings -----------------------------

// Deterministic signed bag-of-tokens: lowercase, split on anything
// non-alphanumeric, hash each token into one of `dim` signed buckets,
// L2-normalize. Throws on text with no tokens.
Tensor embed_task_text(const std::string& description, int dim);

// Externally computed embeddings, keyed by task id:
// {"dim": d, "embeddings": {"<task id>": [d doubles], ...}}.
// Vectors are L2-normalized on load. Throws on dim mismatch.
std::map<int, Tensor> load_embedding_file(const std::string& path, int dim);

// ----------------------------- attention -----------------------------

// Per-task query/key maps "comp.<tag>.Wq" / "comp.<tag>.Wk", both [d, h],
// initialized identically so queries and keys start in the same space.
void composer_assign(ParamStore& store, const std::string& tag, int text_dim,
                     int h, Rng& rng);
std::vector<std::string> composer_param_names(const std::string& tag);

// One frozen earlier policy, as seen by later compositions.
struct PriorPolicy {
  int task_id = 0;          // column label for the attention export
  BackboneBinding binding;  // the sub-network that produced it
  Tensor embedding;         // its task-text embedding [d]
};

struct ComposeWeightsCache {
  Tensor q;                   // [h]
  Tensor K;                   // [P, h]
  std::vector<double> w;      // softmax output
};

// w = softmax((e_k Wq)(E Wk)^T / sqrt(d)) over the prior rows. The weights
// depend only on embeddings, not on the trajectory input.
std::vector<double> compose_weights(ParamStore& store, const std::string& tag,
                                    const Tensor& ek,
                                    const std::vector<PriorPolicy>& priors,
                                    ComposeWeightsCache* cache);
// Accumulates dWq/dWk from d(loss)/d(weights).
void compose_weights_backward(ParamStore& store, const std::string& tag,
                              const Tensor& ek,
                              const std::vector<PriorPolicy>& priors,
                              const ComposeWeightsCache& cache,
                              const std::vector<double>& dw);

// ----------------------------- orchestration -----------------------------

// Context provider for one task-in-training: owns the prior stack and the
// forward caches a train step needs between its hook calls.
class Composer {
 public:
  Composer(const BackboneConfig& cfg, const ComposerConfig& ccfg)
      : cfg_(cfg), ccfg_(ccfg) {}

  void set_task(const std::string& attn_tag, const Tensor& ek);
  void add_prior(PriorPolicy p) { priors_.push_back(std::move(p)); }
  const std::vector<PriorPolicy>& priors() const { return priors_; }
  const ComposerConfig& config() const { return ccfg_; }

  // Which view of the shared trunk the layer-sharing mode reads its context
  // from (defaults to the plain dense trunk). Lets a re-evaluation pin the
  // trunk state a policy was actually trained against.
  void set_share_binding(BackboneBinding b) { share_binding_ = std::move(b); }

  // Whether this task receives any context at all.
  bool active() const {
    return ccfg_.mode != ComposeMode::kNone && !priors_.empty();
  }

  // Current weights over priors (attentive: from the store; direct-add:
  // uniform; layer-share/none: empty).
  std::vector<double> attention(ParamStore& store) const;

  // Context features for a batch, eval mode. Empty tensor when inactive.
  Tensor context(ParamStore& store, const WindowBatch& wb) const;
  ComposeEvalFn eval_fn(ParamStore& store) const;

  // Installs compose_fwd/compose_bwd on the hook set. Only the attentive
  // mode backpropagates (into Wq/Wk); prior features are always constants.
  void attach_hooks(ParamStore& store, DtStepHooks& hooks);

 private:
  Tensor prior_features(ParamStore& store, const WindowBatch& wb,
                        const PriorPolicy& p) const;

  BackboneConfig cfg_;
  ComposerConfig ccfg_;
  std::string tag_;
  Tensor ek_;
  std::vector<PriorPolicy> priors_;
  BackboneBinding share_binding_;
  // Forward caches handed from compose_fwd to compose_bwd within one step.
  std::vector<Tensor> step_phi_;
  ComposeWeightsCache step_attn_;
};

struct WarmupOutcome {
  std::vector<double> losses;     // one per warmup iteration
  EvalResult eval;                // composed-policy evaluation
  bool reuse = false;             // success reached the threshold
  std::vector<double> attention;  // final weights over priors
  bool ran = false;               // false when forced to a new sub-network
};

// Trains only the context parameters and the task head for warmup_iters,
// then evaluates the composed policy (trunk slot zeroed) and compares the
// success rate against eta. With no priors the decision is forced to a new
// sub-network without any training.
WarmupOutcome warmup_and_decide(ParamStore& store, const BackboneConfig& cfg,
                                Composer& comp, const std::string& attn_tag,
                                const std::string& head_prefix,
                                const EpisodeSet& data, const TaskSpec& task,
                                int batch, double lr, Rng& init_rng,
                                uint64_t train_seed, uint64_t eval_seed,
                                int eval_episodes, double target_return);

}  // namespace corl
