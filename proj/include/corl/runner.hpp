#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "corl/backbone.hpp"
#include "corl/composer.hpp"
#include "corl/metrics.hpp"
#include "corl/world.hpp"

#include "json.hpp"

namespace corl {

// ----------------------------- configuration -----------------------------

enum class Method {
  kCompoGrow,
  kCompoPrune,
  kGrowNoCompose,
  kPruneNoCompose,
  kFinetune,
  kL2,
  kEwc,
  kMas,
  kLwf,
  kAgem,
  kPm,
  kMtl,
};

Method method_from_string(const std::string& s);
std::string to_string(Method m);

// Grow/Prune expansion methods run the warmup-and-decide loop; everything
// else trains one shared trunk with per-task heads.
bool method_is_grow(Method m);
bool method_is_prune(Method m);
bool method_uses_composition(Method m);  // any grow/prune variant

struct ExperimentConfig {
  Method method = Method::kCompoGrow;
  // Context mode for composition methods. compoformer-* default to
  // attentive; *-nocompose force none (their defining ablation).
  ComposeMode compose_mode = ComposeMode::kAttentive;
  std::string suite_path;  // "" = built-in task suite
  int order = 0;
  int repeat = 1;
  std::vector<uint64_t> seeds = {1};
  int iters_train = 2000;   // per-task budget
  int iters_warmup = 400;   // context-only warmup budget
  double eta = 0.8;         // reuse threshold on warmup success
  int batch = 32;
  int eval_episodes = 20;
  double lr = 1e-3;
  double lambda = -1.0;  // < 0 resolves to the per-method default
  int lora_rank = 8;
  double keep_fraction = 0.3;
  double retrain_fraction = 0.25;  // of iters_train, after a prune claim
  double mix_ratio = 0.5;          // rehearsal share of the current task
  int importance_samples = 200;    // per-boundary curvature/sensitivity draws
  int text_dim = 64;
  std::string embedding_file;  // "" = built-in deterministic text embedding
  int episodes_per_task = 200;
  uint64_t data_seed = 7;  // dataset stream, shared by every method and seed
  double target_return_pct = 95.0;  // return conditioning at evaluation
  std::string out_dir = "out";     // study root (env CORL_OUT_ROOT prepends)
  std::string run_name;            // "" derives method-o<order>-r<repeat>
  bool write_checkpoints = true;
  BackboneConfig backbone;

  void validate() const;
  // Canonical form: every field spelled out, so hashes are stable.
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);

  double lambda_effective() const;  // per-method default when unset
  // Hash of everything that determines run content (excludes output paths).
  uint64_t config_hash() const;
  // Hash of the shared-protocol fields every method in one study must agree
  // on: suite, order/repeat, budgets, backbone, data, evaluation.
  uint64_t fairness_hash() const;

  std::string resolved_out_root() const;  // CORL_OUT_ROOT applied
  std::string resolved_run_name() const;
  std::string run_dir() const;   // <root>/<run_name>
  std::string data_dir() const;  // <root>/data
};

// ----------------------------- run journal -----------------------------

// What happened to one sequence position. Enough to rebuild the policy for
// that task (binding, head, context) at any later time.
struct TaskRecord {
  int seq = 0;      // 1-based position in the training sequence
  int task_id = 0;  // suite task id (repeats under repeat=2)
  std::string head;  // head parameter prefix
  std::string tag;   // adapter / attention parameter tag
  bool warmup_ran = false;
  double warmup_success = -1.0;
  bool reused = false;           // solved by composition alone
  int subnet = 0;                // new-subnet index; 0 for reused tasks
  bool trained_trunk = false;    // grow: this task trained the base trunk
  int context_level = 0;         // prune mask level the context was read at
  std::vector<int> prior_seqs;   // seq indices of its composition priors
  std::vector<double> attention;  // final weights over prior_seqs
  bool exhausted = false;        // prune: some tensor had no free elements
  double final_loss = 0.0;

  nlohmann::json to_json() const;
  static TaskRecord from_json(const nlohmann::json& j);
};

struct SeedResult {
  uint64_t seed = 0;
  bool completed = false;
  std::string error;  // diagnostic when a seed aborted
  PerformanceMatrix matrix;
  std::vector<TaskRecord> records;
  MetricRow metrics;
};

struct RunResult {
  bool all_completed = false;
  std::string run_dir;
  std::vector<SeedResult> seeds;
};

// ----------------------------- operations -----------------------------

// Writes one dataset file per suite task plus a hash manifest. Regeneration
// is byte-identical.
void gen_data(const ExperimentConfig& cfg);

// Loads the task's dataset from the data dir if present, otherwise generates
// it in memory from the shared data seed (same episodes either way).
EpisodeSet obtain_dataset(const ExperimentConfig& cfg, const TaskSpec& task);

// Full study run: every seed through the task sequence with boundary
// evaluations, then reports (manifest, metrics/curves/attention CSVs, SVG
// heatmaps, timings). A seed that aborts is recorded and the others run on.
// stop_after_tasks > 0 halts every seed at that boundary (checkpoint saved,
// seed reported as incomplete); it bounds execution, not run content, so a
// later resume continues under the same config hash.
RunResult run_experiment(const ExperimentConfig& cfg, int stop_after_tasks = 0);

// Continues one seed from its checkpoint file; refuses on a config-hash
// mismatch. Reports are rewritten for the finished seed.
SeedResult resume_seed(const ExperimentConfig& cfg,
                       const std::string& checkpoint_path);

// Evaluates every task at a checkpoint's current policy state; returns the
// success row in sequence order.
std::vector<double> eval_checkpoint(const ExperimentConfig& cfg,
                                    const std::string& checkpoint_path);

// One run per lambda, aggregated one CSV row per lambda in grid order
// ("lambda,AP_final,F,FWT"); a failed cell yields nan entries.
std::string sweep(const ExperimentConfig& cfg,
                  const std::vector<double>& lambdas);

// Text listing of the suite's stored task orders.
std::string orders_text(const SuiteSpec& suite);

}  // namespace corl
