#include "corl/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <utility>

#include "corl/adam.hpp"
#include "corl/baselines.hpp"
#include "corl/common.hpp"
#include "corl/grow.hpp"
#include "corl/policy.hpp"
#include "corl/prune.hpp"

namespace fs = std::filesystem;

namespace corl {

// ----------------------------- method names -----------------------------

namespace {

struct MethodName {
  const char* name;
  Method method;
};

const MethodName kMethodNames[] = {
    {"compoformer-grow", Method::kCompoGrow},
    {"compoformer-prune", Method::kCompoPrune},
    {"grow-nocompose", Method::kGrowNoCompose},
    {"prune-nocompose", Method::kPruneNoCompose},
    {"finetune", Method::kFinetune},
    {"l2", Method::kL2},
    {"ewc", Method::kEwc},
    {"mas", Method::kMas},
    {"lwf", Method::kLwf},
    {"agem", Method::kAgem},
    {"pm", Method::kPm},
    {"mtl", Method::kMtl},
};

}  // namespace

Method method_from_string(const std::string& s) {
  for (const auto& e : kMethodNames)
    if (s == e.name) return e.method;
  fail("unknown method: " + s);
}

std::string to_string(Method m) {
  for (const auto& e : kMethodNames)
    if (m == e.method) return e.name;
  fail("unmapped method enum value");
}

bool method_is_grow(Method m) {
  return m == Method::kCompoGrow || m == Method::kGrowNoCompose;
}

bool method_is_prune(Method m) {
  return m == Method::kCompoPrune || m == Method::kPruneNoCompose;
}

bool method_uses_composition(Method m) {
  return method_is_grow(m) || method_is_prune(m);
}

// ----------------------------- configuration -----------------------------

namespace {

nlohmann::json backbone_json(const BackboneConfig& b) {
  return {{"layers", b.layers},       {"heads", b.heads},
          {"h", b.h},                 {"state_dim", b.state_dim},
          {"action_dim", b.action_dim}, {"window", b.window},
          {"max_timestep", b.max_timestep}, {"dropout", b.dropout},
          {"rtg_scale", b.rtg_scale}};
}

void backbone_from_json(const nlohmann::json& j, BackboneConfig& b) {
  static const char* known[] = {"layers", "heads", "h", "state_dim",
                                "action_dim", "window", "max_timestep",
                                "dropout", "rtg_scale"};
  for (const auto& kv : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || kv.key() == k;
    CORL_CHECK(ok, "unknown backbone config key: " + kv.key());
  }
  if (j.count("layers")) b.layers = j.at("layers").get<int>();
  if (j.count("heads")) b.heads = j.at("heads").get<int>();
  if (j.count("h")) b.h = j.at("h").get<int>();
  if (j.count("state_dim")) b.state_dim = j.at("state_dim").get<int>();
  if (j.count("action_dim")) b.action_dim = j.at("action_dim").get<int>();
  if (j.count("window")) b.window = j.at("window").get<int>();
  if (j.count("max_timestep")) b.max_timestep = j.at("max_timestep").get<int>();
  if (j.count("dropout")) b.dropout = j.at("dropout").get<double>();
  if (j.count("rtg_scale")) b.rtg_scale = j.at("rtg_scale").get<double>();
}

}  // namespace

void ExperimentConfig::validate() const {
  CORL_CHECK(iters_train >= 1, "iters_train must be positive");
  CORL_CHECK(iters_warmup >= 1, "iters_warmup must be positive");
  CORL_CHECK(eta >= 0.0 && eta <= 1.0, "eta must lie in [0, 1]");
  CORL_CHECK(batch >= 1, "batch must be positive");
  CORL_CHECK(eval_episodes >= 1, "eval_episodes must be positive");
  CORL_CHECK(lr > 0.0, "lr must be positive");
  CORL_CHECK(lora_rank >= 1, "lora_rank must be positive");
  CORL_CHECK(keep_fraction > 0.0 && keep_fraction <= 1.0,
             "keep_fraction must lie in (0, 1]");
  CORL_CHECK(retrain_fraction >= 0.0 && retrain_fraction <= 1.0,
             "retrain_fraction must lie in [0, 1]");
  CORL_CHECK(mix_ratio >= 0.0 && mix_ratio <= 1.0,
             "mix_ratio must lie in [0, 1]");
  CORL_CHECK(importance_samples >= 1, "importance_samples must be positive");
  CORL_CHECK(text_dim >= 1, "text_dim must be positive");
  CORL_CHECK(episodes_per_task >= 1, "episodes_per_task must be positive");
  CORL_CHECK(target_return_pct >= 0.0 && target_return_pct <= 100.0,
             "target_return_pct must lie in [0, 100]");
  CORL_CHECK(order >= 0, "order must be non-negative");
  CORL_CHECK(repeat == 1 || repeat == 2, "repeat must be 1 or 2");
  CORL_CHECK(!seeds.empty(), "at least one seed is required");
  CORL_CHECK(backbone.layers >= 1 && backbone.heads >= 1 && backbone.h >= 1,
             "backbone dimensions must be positive");
  CORL_CHECK(backbone.h % backbone.heads == 0,
             "backbone width must divide evenly across attention heads");
  CORL_CHECK(backbone.window >= 1 && backbone.max_timestep >= 1,
             "backbone window and max_timestep must be positive");
  CORL_CHECK(backbone.dropout >= 0.0 && backbone.dropout < 1.0,
             "dropout must lie in [0, 1)");
  CORL_CHECK(backbone.rtg_scale > 0.0, "rtg_scale must be positive");
}

nlohmann::json ExperimentConfig::to_json() const {
  return {{"method", corl::to_string(method)},
          {"compose_mode", corl::to_string(compose_mode)},
          {"suite_path", suite_path},
          {"order", order},
          {"repeat", repeat},
          {"seeds", seeds},
          {"iters_train", iters_train},
          {"iters_warmup", iters_warmup},
          {"eta", eta},
          {"batch", batch},
          {"eval_episodes", eval_episodes},
          {"lr", lr},
          {"lambda", lambda},
          {"lora_rank", lora_rank},
          {"keep_fraction", keep_fraction},
          {"retrain_fraction", retrain_fraction},
          {"mix_ratio", mix_ratio},
          {"importance_samples", importance_samples},
          {"text_dim", text_dim},
          {"embedding_file", embedding_file},
          {"episodes_per_task", episodes_per_task},
          {"data_seed", data_seed},
          {"target_return_pct", target_return_pct},
          {"out_dir", out_dir},
          {"run_name", run_name},
          {"write_checkpoints", write_checkpoints},
          {"backbone", backbone_json(backbone)}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  static const char* known[] = {
      "method",        "compose_mode",     "suite_path",
      "order",         "repeat",           "seeds",
      "iters_train",   "iters_warmup",     "eta",
      "batch",         "eval_episodes",    "lr",
      "lambda",        "lora_rank",        "keep_fraction",
      "retrain_fraction", "mix_ratio",     "importance_samples",
      "text_dim",      "embedding_file",   "episodes_per_task",
      "data_seed",     "target_return_pct", "out_dir",
      "run_name",      "write_checkpoints", "backbone"};
  for (const auto& kv : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || kv.key() == k;
    CORL_CHECK(ok, "unknown config key: " + kv.key());
  }
  ExperimentConfig c;
  if (j.count("method")) c.method = method_from_string(j.at("method").get<std::string>());
  if (j.count("compose_mode"))
    c.compose_mode = compose_mode_from_string(j.at("compose_mode").get<std::string>());
  if (j.count("suite_path")) c.suite_path = j.at("suite_path").get<std::string>();
  if (j.count("order")) c.order = j.at("order").get<int>();
  if (j.count("repeat")) c.repeat = j.at("repeat").get<int>();
  if (j.count("seeds")) c.seeds = j.at("seeds").get<std::vector<uint64_t>>();
  if (j.count("iters_train")) c.iters_train = j.at("iters_train").get<int>();
  if (j.count("iters_warmup")) c.iters_warmup = j.at("iters_warmup").get<int>();
  if (j.count("eta")) c.eta = j.at("eta").get<double>();
  if (j.count("batch")) c.batch = j.at("batch").get<int>();
  if (j.count("eval_episodes")) c.eval_episodes = j.at("eval_episodes").get<int>();
  if (j.count("lr")) c.lr = j.at("lr").get<double>();
  if (j.count("lambda")) c.lambda = j.at("lambda").get<double>();
  if (j.count("lora_rank")) c.lora_rank = j.at("lora_rank").get<int>();
  if (j.count("keep_fraction")) c.keep_fraction = j.at("keep_fraction").get<double>();
  if (j.count("retrain_fraction"))
    c.retrain_fraction = j.at("retrain_fraction").get<double>();
  if (j.count("mix_ratio")) c.mix_ratio = j.at("mix_ratio").get<double>();
  if (j.count("importance_samples"))
    c.importance_samples = j.at("importance_samples").get<int>();
  if (j.count("text_dim")) c.text_dim = j.at("text_dim").get<int>();
  if (j.count("embedding_file"))
    c.embedding_file = j.at("embedding_file").get<std::string>();
  if (j.count("episodes_per_task"))
    c.episodes_per_task = j.at("episodes_per_task").get<int>();
  if (j.count("data_seed")) c.data_seed = j.at("data_seed").get<uint64_t>();
  if (j.count("target_return_pct"))
    c.target_return_pct = j.at("target_return_pct").get<double>();
  if (j.count("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
  if (j.count("run_name")) c.run_name = j.at("run_name").get<std::string>();
  if (j.count("write_checkpoints"))
    c.write_checkpoints = j.at("write_checkpoints").get<bool>();
  if (j.count("backbone")) backbone_from_json(j.at("backbone"), c.backbone);
  return c;
}

double ExperimentConfig::lambda_effective() const {
  if (lambda >= 0.0) return lambda;
  switch (method) {
    case Method::kL2: return 5e3;
    case Method::kEwc: return 5e3;
    case Method::kMas: return 1e1;
    case Method::kLwf: return 1e0;
    default: return 0.0;
  }
}

uint64_t ExperimentConfig::config_hash() const {
  nlohmann::json j = to_json();
  j.erase("out_dir");
  j.erase("run_name");
  j.erase("write_checkpoints");
  return fnv1a_str(j.dump());
}

uint64_t ExperimentConfig::fairness_hash() const {
  nlohmann::json j = {{"suite_path", suite_path},
                      {"order", order},
                      {"repeat", repeat},
                      {"iters_train", iters_train},
                      {"iters_warmup", iters_warmup},
                      {"batch", batch},
                      {"eval_episodes", eval_episodes},
                      {"lr", lr},
                      {"episodes_per_task", episodes_per_task},
                      {"data_seed", data_seed},
                      {"target_return_pct", target_return_pct},
                      {"backbone", backbone_json(backbone)}};
  return fnv1a_str(j.dump());
}

std::string ExperimentConfig::resolved_out_root() const {
  if (fs::path(out_dir).is_absolute()) return out_dir;
  const char* env = std::getenv("CORL_OUT_ROOT");
  if (env != nullptr && *env != '\0') return std::string(env) + "/" + out_dir;
  return out_dir;
}

std::string ExperimentConfig::resolved_run_name() const {
  if (!run_name.empty()) return run_name;
  return corl::to_string(method) + "-o" + std::to_string(order) + "-r" +
         std::to_string(repeat);
}

std::string ExperimentConfig::run_dir() const {
  return resolved_out_root() + "/" + resolved_run_name();
}

std::string ExperimentConfig::data_dir() const {
  return resolved_out_root() + "/data";
}

// ----------------------------- run journal -----------------------------

nlohmann::json TaskRecord::to_json() const {
  return {{"seq", seq},
          {"task_id", task_id},
          {"head", head},
          {"tag", tag},
          {"warmup_ran", warmup_ran},
          {"warmup_success", warmup_success},
          {"reused", reused},
          {"subnet", subnet},
          {"trained_trunk", trained_trunk},
          {"context_level", context_level},
          {"prior_seqs", prior_seqs},
          {"attention", attention},
          {"exhausted", exhausted},
          {"final_loss", final_loss}};
}

TaskRecord TaskRecord::from_json(const nlohmann::json& j) {
  TaskRecord r;
  r.seq = j.at("seq").get<int>();
  r.task_id = j.at("task_id").get<int>();
  r.head = j.at("head").get<std::string>();
  r.tag = j.at("tag").get<std::string>();
  r.warmup_ran = j.at("warmup_ran").get<bool>();
  r.warmup_success = j.at("warmup_success").get<double>();
  r.reused = j.at("reused").get<bool>();
  r.subnet = j.at("subnet").get<int>();
  r.trained_trunk = j.at("trained_trunk").get<bool>();
  r.context_level = j.at("context_level").get<int>();
  r.prior_seqs = j.at("prior_seqs").get<std::vector<int>>();
  r.attention = j.at("attention").get<std::vector<double>>();
  r.exhausted = j.at("exhausted").get<bool>();
  r.final_loss = j.at("final_loss").get<double>();
  return r;
}

// ----------------------------- datasets -----------------------------

namespace {

std::string dataset_path(const ExperimentConfig& cfg, int task_id) {
  return cfg.data_dir() + "/task_" + std::to_string(task_id) + ".json";
}

}  // namespace

void gen_data(const ExperimentConfig& cfg) {
  cfg.validate();
  SuiteSpec suite = load_suite(cfg.suite_path);
  const std::string dir = cfg.data_dir();
  fs::create_directories(dir);
  nlohmann::json files = nlohmann::json::object();
  for (const TaskSpec& task : suite.tasks) {
    EpisodeSet set = generate_dataset(
        task, cfg.episodes_per_task,
        stream_seed(cfg.data_seed, "data", {uint64_t(task.id)}));
    const std::string fname = "task_" + std::to_string(task.id) + ".json";
    save_episodes(set, dir + "/" + fname);
    files[fname] = hex64(fnv1a_str(read_text_file(dir + "/" + fname)));
  }
  nlohmann::json manifest = {{"format_version", 1},
                             {"suite", suite.name},
                             {"data_seed", cfg.data_seed},
                             {"episodes_per_task", cfg.episodes_per_task},
                             {"files", files}};
  write_text_file(dir + "/data_manifest.json", manifest.dump(2) + "\n");
}

EpisodeSet obtain_dataset(const ExperimentConfig& cfg, const TaskSpec& task) {
  const std::string path = dataset_path(cfg, task.id);
  if (fs::exists(path)) {
    EpisodeSet set = load_episodes(path);
    CORL_CHECK(set.task_id == task.id,
               "dataset file holds a different task id: " + path);
    CORL_CHECK(int(set.episodes.size()) == cfg.episodes_per_task,
               "dataset file episode count differs from the configured "
               "episodes_per_task: " + path);
    return set;
  }
  return generate_dataset(task, cfg.episodes_per_task,
                          stream_seed(cfg.data_seed, "data", {uint64_t(task.id)}));
}

// ----------------------------- seed orchestration -----------------------------

namespace {

nlohmann::json tensor_json(const Tensor& t) {
  return {{"shape", t.shape}, {"values", t.v}};
}

Tensor tensor_from_json(const nlohmann::json& j) {
  Tensor t(j.at("shape").get<std::vector<int>>());
  std::vector<double> v = j.at("values").get<std::vector<double>>();
  CORL_CHECK(int64_t(v.size()) == t.size(),
             "tensor value count does not match its shape");
  t.v = std::move(v);
  return t;
}

nlohmann::json table_json(const ImportanceTable& table) {
  nlohmann::json imp = nlohmann::json::object();
  nlohmann::json snap = nlohmann::json::object();
  for (const auto& kv : table.importance) imp[kv.first] = tensor_json(kv.second);
  for (const auto& kv : table.snapshot) snap[kv.first] = tensor_json(kv.second);
  return {{"importance", imp}, {"snapshot", snap}};
}

ImportanceTable table_from_json(const nlohmann::json& j) {
  ImportanceTable t;
  for (const auto& kv : j.at("importance").items())
    t.importance.emplace(kv.key(), tensor_from_json(kv.value()));
  for (const auto& kv : j.at("snapshot").items())
    t.snapshot.emplace(kv.key(), tensor_from_json(kv.value()));
  return t;
}

// Drives one seed through the task sequence: owns the parameter store, the
// expansion bookkeeping, the boundary evaluations, and the checkpoint state.
class SeedRun {
 public:
  SeedRun(const ExperimentConfig& cfg, const SuiteSpec& suite,
          const std::map<int, EpisodeSet>& data, uint64_t seed)
      : cfg_(cfg), suite_(suite), data_(data), seed_(seed) {
    seq_ = task_sequence(suite_, cfg_.order, cfg_.repeat);
    K_ = int(seq_.size());
    if (method_uses_composition(cfg_.method)) load_embeddings();
  }

  void init_fresh();
  void load_state(const nlohmann::json& ck);
  SeedResult execute(const std::string& seed_dir, std::vector<int64_t>* task_ms,
                     int stop_after = 0);
  std::vector<double> eval_row();
  int completed() const { return completed_; }

 private:
  const BackboneConfig& bb() const { return cfg_.backbone; }
  std::string head_name(int j) const { return "h.k" + std::to_string(j) + "."; }
  std::string tag_name(int j) const { return "k" + std::to_string(j); }
  const TaskSpec& task_for_seq(int j) const {
    return suite_task(suite_, seq_[size_t(j - 1)]);
  }
  const EpisodeSet& data_for_seq(int j) const {
    return data_.at(seq_[size_t(j - 1)]);
  }
  double target_for_seq(int j) const {
    return return_percentile(data_for_seq(j), cfg_.target_return_pct);
  }
  ComposeMode effective_mode() const {
    if (cfg_.method == Method::kGrowNoCompose ||
        cfg_.method == Method::kPruneNoCompose)
      return ComposeMode::kNone;
    return cfg_.compose_mode;
  }
  std::vector<std::string> trunk_names() const {
    return backbone_param_names(bb(), "bb.");
  }

  void load_embeddings();
  void freeze_names(const std::vector<std::string>& names) {
    for (const std::string& n : names) store_.get(n).freeze_all();
  }
  void freeze_non_book_trunk() {
    for (const std::string& n : trunk_names())
      if (book_.owner.count(n) == 0) store_.get(n).freeze_all();
  }
  void build_level_binding(int k);
  BackboneBinding binding_for_record(const TaskRecord& r);
  Composer composer_for_record(const TaskRecord& r);

  void train_task(int j);
  void train_task_composed(int j);
  void train_task_shared(int j);
  void train_block_mtl(int j);
  double eval_task(int i);

  nlohmann::json state_json() const;
  void write_checkpoint(const std::string& seed_dir) const;
  void write_seed_reports(const std::string& seed_dir,
                          const PerformanceMatrix& P) const;

  const ExperimentConfig& cfg_;
  const SuiteSpec& suite_;
  const std::map<int, EpisodeSet>& data_;
  uint64_t seed_;
  std::vector<int> seq_;
  int K_ = 0;
  std::map<int, Tensor> embeddings_;  // task id -> [text_dim]
  BackboneBinding plain_bind_;

  ParamStore store_;
  std::vector<TaskRecord> records_;
  std::vector<std::vector<double>> rows_;
  int completed_ = 0;

  PruneBook book_;
  std::map<int, MaskSet> mask_store_;  // per level; bindings point into this
  std::map<int, BackboneBinding> level_bindings_;
  int subnet_count_ = 0;

  ImportanceTable reg_table_;
  std::unique_ptr<Adam> mtl_opt_;
};

void SeedRun::load_embeddings() {
  if (!cfg_.embedding_file.empty()) {
    embeddings_ = load_embedding_file(cfg_.embedding_file, cfg_.text_dim);
    for (int id : seq_)
      CORL_CHECK(embeddings_.count(id) != 0,
                 "embedding file lacks task " + std::to_string(id));
    return;
  }
  for (const TaskSpec& t : suite_.tasks)
    embeddings_.emplace(t.id, embed_task_text(t.description, cfg_.text_dim));
}

void SeedRun::init_fresh() {
  Rng trunk_rng(stream_seed(seed_, "init-trunk"));
  backbone_init(store_, bb(), "bb.", trunk_rng);
  // Every head exists from the start so any task can be evaluated at any
  // checkpoint, trained or not, with one protocol.
  for (int j = 1; j <= K_; ++j) {
    Rng head_rng(stream_seed(seed_, "init-head", {uint64_t(j)}));
    head_init(store_, head_name(j), bb().h, bb().action_dim, head_rng);
  }
  if (method_is_prune(cfg_.method))
    book_ = prune_book_init(bb(), "bb.", cfg_.keep_fraction);
  if (cfg_.method == Method::kMtl) {
    // One continuous optimizer across the whole mixed run.
    mtl_opt_ = std::make_unique<Adam>(cfg_.lr);
    std::vector<std::string> names = trunk_names();
    for (int j = 1; j <= K_; ++j)
      for (const std::string& n : head_param_names(head_name(j)))
        names.push_back(n);
    mtl_opt_->attach(store_, names);
  }
}

void SeedRun::build_level_binding(int k) {
  if (level_bindings_.count(k) != 0) return;
  MaskSet& storage = mask_store_[k];
  level_bindings_.emplace(k, prune_binding(book_, k, storage));
}

BackboneBinding SeedRun::binding_for_record(const TaskRecord& r) {
  CORL_CHECK(r.subnet > 0, "reused tasks do not own a sub-network");
  if (method_is_grow(cfg_.method)) {
    if (r.trained_trunk) return BackboneBinding{};
    return grow_binding(bb(), r.tag);
  }
  build_level_binding(r.subnet);
  return level_bindings_.at(r.subnet);
}

Composer SeedRun::composer_for_record(const TaskRecord& r) {
  ComposerConfig cc;
  cc.text_dim = cfg_.text_dim;
  cc.eta = cfg_.eta;
  cc.warmup_iters = cfg_.iters_warmup;
  cc.mode = effective_mode();
  Composer comp(bb(), cc);
  comp.set_task(r.tag, embeddings_.at(r.task_id));
  for (int ps : r.prior_seqs) {
    const TaskRecord& pr = records_[size_t(ps - 1)];
    PriorPolicy p;
    p.task_id = pr.seq;
    p.binding = binding_for_record(pr);
    p.embedding = embeddings_.at(pr.task_id);
    comp.add_prior(std::move(p));
  }
  if (cc.mode == ComposeMode::kLayerShare && r.context_level > 0) {
    build_level_binding(r.context_level);
    comp.set_share_binding(level_bindings_.at(r.context_level));
  }
  return comp;
}

double SeedRun::eval_task(int i) {
  const TaskSpec& task = task_for_seq(i);
  const double target = target_for_seq(i);
  // The eval stream depends only on the task position, never on the
  // checkpoint, so a policy frozen at its boundary re-evaluates identically
  // in every later row.
  const uint64_t es = stream_seed(seed_, "eval-task", {uint64_t(i)});
  EvalResult ev;
  if (i <= int(records_.size()) && method_uses_composition(cfg_.method)) {
    const TaskRecord& r = records_[size_t(i - 1)];
    Composer comp = composer_for_record(r);
    ComposeEvalFn fn;
    if (comp.active()) fn = comp.eval_fn(store_);
    BackboneBinding bind = r.reused ? BackboneBinding{} : binding_for_record(r);
    ev = eval_rollout(store_, bb(), bind, r.head, fn, task, cfg_.eval_episodes,
                      es, target, /*zero_features=*/r.reused);
  } else {
    // Shared-trunk methods and still-untrained tasks: the current trunk with
    // the task's own head.
    ev = eval_rollout(store_, bb(), plain_bind_, head_name(i), nullptr, task,
                      cfg_.eval_episodes, es, target);
  }
  CORL_CHECK(!ev.nan_abort, "evaluation produced a non-finite action on task " +
                                std::to_string(i));
  return ev.success_rate;
}

std::vector<double> SeedRun::eval_row() {
  std::vector<double> row;
  row.reserve(size_t(K_));
  for (int i = 1; i <= K_; ++i) row.push_back(eval_task(i));
  return row;
}

void SeedRun::train_task(int j) {
  if (method_uses_composition(cfg_.method)) {
    train_task_composed(j);
  } else if (cfg_.method == Method::kMtl) {
    train_block_mtl(j);
  } else {
    train_task_shared(j);
  }
}

void SeedRun::train_task_composed(int j) {
  TaskRecord rec;
  rec.seq = j;
  rec.task_id = seq_[size_t(j - 1)];
  rec.head = head_name(j);
  rec.tag = tag_name(j);
  const TaskSpec& task = task_for_seq(j);
  const EpisodeSet& data = data_for_seq(j);
  const double target = target_for_seq(j);

  ComposerConfig cc;
  cc.text_dim = cfg_.text_dim;
  cc.eta = cfg_.eta;
  cc.warmup_iters = cfg_.iters_warmup;
  cc.mode = effective_mode();
  Composer comp(bb(), cc);
  comp.set_task(rec.tag, embeddings_.at(rec.task_id));
  for (const TaskRecord& r : records_) {
    if (r.subnet == 0) continue;  // reused tasks contribute no new policy
    PriorPolicy p;
    p.task_id = r.seq;
    p.binding = binding_for_record(r);
    p.embedding = embeddings_.at(r.task_id);
    comp.add_prior(std::move(p));
    rec.prior_seqs.push_back(r.seq);
  }
  // The trunk view the layer-sharing context was computed against. At every
  // boundary the dense trunk coincides with the highest claimed level, so
  // recording the level pins the exact training-time context for re-evals.
  rec.context_level = method_is_prune(cfg_.method) ? book_.tasks_claimed : 0;

  Rng comp_init(stream_seed(seed_, "init-comp", {uint64_t(j)}));
  WarmupOutcome w = warmup_and_decide(
      store_, bb(), comp, rec.tag, rec.head, data, task, cfg_.batch, cfg_.lr,
      comp_init, stream_seed(seed_, "warmup", {uint64_t(j)}),
      stream_seed(seed_, "eval-warmup", {uint64_t(j)}), cfg_.eval_episodes,
      target);
  rec.warmup_ran = w.ran;
  if (w.ran) rec.warmup_success = w.eval.success_rate;

  const bool has_attn = w.ran && cc.mode == ComposeMode::kAttentive;
  if (w.ran && w.reuse) {
    rec.reused = true;
    rec.attention = w.attention;
    freeze_names(head_param_names(rec.head));
    if (has_attn) freeze_names(composer_param_names(rec.tag));
    records_.push_back(std::move(rec));
    return;
  }

  // New sub-network. The head (and any attention parameters) keep training
  // alongside it from their warmup state.
  std::vector<std::string> tn = head_param_names(rec.head);
  if (has_attn)
    for (const std::string& n : composer_param_names(rec.tag)) tn.push_back(n);
  BackboneBinding train_bind;
  rec.subnet = ++subnet_count_;
  if (method_is_grow(cfg_.method)) {
    if (rec.subnet == 1) {
      rec.trained_trunk = true;  // first expansion trains the base trunk
      for (const std::string& n : trunk_names()) tn.push_back(n);
    } else {
      Rng adapter_rng(stream_seed(seed_, "init-adapter", {uint64_t(j)}));
      grow_add_adapters(store_, bb(), rec.tag, cfg_.lora_rank, adapter_rng);
      for (const std::string& n : grow_param_names(bb(), rec.tag))
        tn.push_back(n);
      train_bind = grow_binding(bb(), rec.tag);
    }
  } else {
    prune_freeze_for_training(book_, store_);
    for (const std::string& n : trunk_names()) tn.push_back(n);
  }

  DtStepHooks hooks;
  if (comp.active()) comp.attach_hooks(store_, hooks);
  {
    Adam opt(cfg_.lr);
    opt.attach(store_, tn);
    Rng sample_rng(stream_seed(seed_, "train-sample", {uint64_t(j)}));
    Rng drop_rng(stream_seed(seed_, "train-drop", {uint64_t(j)}));
    for (int it = 0; it < cfg_.iters_train; ++it)
      rec.final_loss = dt_train_step(store_, bb(), train_bind, rec.head, data,
                                     cfg_.batch, opt, sample_rng, drop_rng,
                                     hooks);
  }

  if (method_is_prune(cfg_.method)) {
    PruneClaim claim = prune_claim(book_, store_, rec.subnet);
    rec.exhausted = claim.exhausted_any;
    build_level_binding(rec.subnet);
    rec.context_level = rec.subnet;
    prune_freeze_for_retrain(book_, store_, rec.subnet);
    const int retrain_iters =
        int(std::llround(cfg_.retrain_fraction * cfg_.iters_train));
    Adam ropt(cfg_.lr);
    ropt.attach(store_, tn);
    Rng sample_rng(stream_seed(seed_, "retrain-sample", {uint64_t(j)}));
    Rng drop_rng(stream_seed(seed_, "retrain-drop", {uint64_t(j)}));
    for (int it = 0; it < retrain_iters; ++it)
      rec.final_loss = dt_train_step(store_, bb(), train_bind, rec.head, data,
                                     cfg_.batch, ropt, sample_rng, drop_rng,
                                     hooks);
    // The non-packed trunk parameters (embeddings, norms, biases) belong to
    // the first packing task; afterwards only free weight elements train.
    if (rec.subnet == 1) freeze_non_book_trunk();
  } else if (rec.trained_trunk) {
    freeze_names(trunk_names());
  } else {
    freeze_names(grow_param_names(bb(), rec.tag));
  }

  if (comp.active()) rec.attention = comp.attention(store_);
  freeze_names(head_param_names(rec.head));
  if (has_attn) freeze_names(composer_param_names(rec.tag));
  records_.push_back(std::move(rec));
}

void SeedRun::train_task_shared(int j) {
  TaskRecord rec;
  rec.seq = j;
  rec.task_id = seq_[size_t(j - 1)];
  rec.head = head_name(j);
  rec.tag = tag_name(j);
  const EpisodeSet& data = data_for_seq(j);
  const Method m = cfg_.method;
  const std::vector<std::string> tnames = trunk_names();

  std::vector<std::string> tn = tnames;
  for (const std::string& n : head_param_names(rec.head)) tn.push_back(n);

  DtStepHooks hooks;
  LwfState lwf;
  AgemMemory memory;
  Rng agem_rng(stream_seed(seed_, "agem", {uint64_t(j)}));
  if ((m == Method::kL2 || m == Method::kEwc || m == Method::kMas) && j >= 2) {
    const double lam = cfg_.lambda_effective();
    hooks.param_penalty = [this, lam]() {
      return reg_penalty(store_, reg_table_, lam, /*accumulate_grads=*/true);
    };
  }
  if (m == Method::kLwf && j >= 2) {
    lwf.old_params = store_;  // boundary snapshot
    lwf.lambda = cfg_.lambda_effective();
    for (int i = 1; i < j; ++i) lwf.prior_heads.push_back(head_name(i));
    hooks.feature_loss = make_lwf_hook(lwf, store_, bb(), plain_bind_);
  }
  if (m == Method::kAgem && j >= 2) {
    for (int i = 1; i < j; ++i) {
      memory.datasets.push_back(&data_for_seq(i));
      memory.heads.push_back(head_name(i));
    }
    hooks.post_backward = make_agem_hook(store_, bb(), plain_bind_, memory,
                                         tnames, cfg_.batch, agem_rng);
  }

  Adam opt(cfg_.lr);
  Rng sample_rng(stream_seed(seed_, "train-sample", {uint64_t(j)}));
  Rng drop_rng(stream_seed(seed_, "train-drop", {uint64_t(j)}));

  if (m == Method::kPm && j >= 2) {
    std::vector<MixedItem> items;
    items.push_back({&data, rec.head});
    for (int i = 1; i < j; ++i) {
      items.push_back({&data_for_seq(i), head_name(i)});
      for (const std::string& n : head_param_names(head_name(i)))
        tn.push_back(n);
    }
    opt.attach(store_, tn);
    Rng mix_rng(stream_seed(seed_, "mix", {uint64_t(j)}));
    for (int it = 0; it < cfg_.iters_train; ++it) {
      std::vector<int> slots = rehearsal_assignment(
          cfg_.batch, cfg_.mix_ratio, int(items.size()), mix_rng);
      rec.final_loss = mixed_train_step(store_, bb(), plain_bind_, items,
                                        slots, opt, sample_rng, drop_rng);
    }
  } else {
    opt.attach(store_, tn);
    for (int it = 0; it < cfg_.iters_train; ++it)
      rec.final_loss = dt_train_step(store_, bb(), plain_bind_, rec.head, data,
                                     cfg_.batch, opt, sample_rng, drop_rng,
                                     hooks);
  }

  if (m == Method::kL2) {
    reg_table_ = make_uniform_table(store_, tnames);
  } else if (m == Method::kEwc || m == Method::kMas) {
    Rng imp_rng(stream_seed(seed_, "importance", {uint64_t(j)}));
    importance_update_dt(m == Method::kEwc ? RegMethod::kEwc : RegMethod::kMas,
                         store_, bb(), plain_bind_, rec.head, data,
                         cfg_.importance_samples, imp_rng, tnames, reg_table_);
  }
  records_.push_back(std::move(rec));
}

void SeedRun::train_block_mtl(int j) {
  TaskRecord rec;
  rec.seq = j;
  rec.task_id = seq_[size_t(j - 1)];
  rec.head = head_name(j);
  rec.tag = tag_name(j);
  std::vector<MixedItem> items;
  for (int i = 1; i <= K_; ++i) items.push_back({&data_for_seq(i), head_name(i)});
  Rng sample_rng(stream_seed(seed_, "train-sample", {uint64_t(j)}));
  Rng drop_rng(stream_seed(seed_, "train-drop", {uint64_t(j)}));
  Rng mix_rng(stream_seed(seed_, "mix", {uint64_t(j)}));
  for (int it = 0; it < cfg_.iters_train; ++it) {
    std::vector<int> slots =
        uniform_assignment(cfg_.batch, int(items.size()), mix_rng);
    rec.final_loss = mixed_train_step(store_, bb(), plain_bind_, items, slots,
                                      *mtl_opt_, sample_rng, drop_rng);
  }
  records_.push_back(std::move(rec));
}

nlohmann::json SeedRun::state_json() const {
  nlohmann::json j = {{"format_version", 1},
                      {"config_hash", hex64(cfg_.config_hash())},
                      {"seed", seed_},
                      {"completed", completed_},
                      {"subnet_count", subnet_count_},
                      {"store", store_.to_json()},
                      {"rows", rows_}};
  nlohmann::json recs = nlohmann::json::array();
  for (const TaskRecord& r : records_) recs.push_back(r.to_json());
  j["records"] = std::move(recs);
  if (method_is_prune(cfg_.method)) j["prune_book"] = book_.to_json();
  if (cfg_.method == Method::kL2 || cfg_.method == Method::kEwc ||
      cfg_.method == Method::kMas)
    j["reg_table"] = table_json(reg_table_);
  if (cfg_.method == Method::kMtl) j["mtl_opt"] = mtl_opt_->to_json();
  return j;
}

void SeedRun::load_state(const nlohmann::json& ck) {
  CORL_CHECK(ck.at("format_version").get<int>() == 1,
             "unsupported checkpoint format version");
  CORL_CHECK(ck.at("config_hash").get<std::string>() == hex64(cfg_.config_hash()),
             "checkpoint was written under a different config (hash mismatch); "
             "refusing to resume");
  CORL_CHECK(ck.at("seed").get<uint64_t>() == seed_,
             "checkpoint seed does not match");
  completed_ = ck.at("completed").get<int>();
  subnet_count_ = ck.at("subnet_count").get<int>();
  store_ = ParamStore::from_json(ck.at("store"));
  rows_ = ck.at("rows").get<std::vector<std::vector<double>>>();
  records_.clear();
  for (const auto& rj : ck.at("records")) records_.push_back(TaskRecord::from_json(rj));
  CORL_CHECK(int(records_.size()) == completed_,
             "checkpoint record count does not match its progress");
  CORL_CHECK(int(rows_.size()) == completed_ + 1,
             "checkpoint row count does not match its progress");
  for (const auto& row : rows_)
    CORL_CHECK(int(row.size()) == K_,
               "checkpoint row width does not match the task sequence");
  if (method_is_prune(cfg_.method))
    book_ = PruneBook::from_json(ck.at("prune_book"));
  if (cfg_.method == Method::kL2 || cfg_.method == Method::kEwc ||
      cfg_.method == Method::kMas)
    reg_table_ = table_from_json(ck.at("reg_table"));
  if (cfg_.method == Method::kMtl)
    mtl_opt_ = std::make_unique<Adam>(Adam::from_json(ck.at("mtl_opt")));
}

void SeedRun::write_checkpoint(const std::string& seed_dir) const {
  const std::string path = seed_dir + "/checkpoint.json";
  write_text_file(path + ".tmp", state_json().dump() + "\n");
  fs::rename(path + ".tmp", path);
}

void SeedRun::write_seed_reports(const std::string& seed_dir,
                                 const PerformanceMatrix& P) const {
  write_text_file(seed_dir + "/curves.csv", curves_csv(P));

  std::vector<std::string> row_labels, col_labels;
  for (int t = 0; t <= K_; ++t) row_labels.push_back("t" + std::to_string(t));
  for (int i = 1; i <= K_; ++i)
    col_labels.push_back(std::to_string(seq_[size_t(i - 1)]));
  write_text_file(seed_dir + "/performance.svg",
                  svg_heatmap(P.p, row_labels, col_labels,
                              "success by checkpoint, seed " +
                                  std::to_string(seed_)));

  if (!method_uses_composition(cfg_.method)) return;
  std::vector<int> ids;
  for (int i = 1; i <= K_; ++i) ids.push_back(seq_[size_t(i - 1)]);
  std::vector<std::vector<double>> attn(size_t(K_),
                                        std::vector<double>(size_t(K_), 0.0));
  for (const TaskRecord& r : records_) {
    attn[size_t(r.seq - 1)][size_t(r.seq - 1)] = 1.0;
    for (size_t idx = 0; idx < r.prior_seqs.size(); ++idx)
      if (idx < r.attention.size())
        attn[size_t(r.seq - 1)][size_t(r.prior_seqs[idx] - 1)] =
            r.attention[idx];
  }
  write_text_file(seed_dir + "/attention.csv", attention_csv(ids, attn));
  std::vector<std::string> labels;
  for (int id : ids) labels.push_back(std::to_string(id));
  write_text_file(seed_dir + "/attention.svg",
                  svg_heatmap(attn, labels, labels,
                              "composition weights, seed " +
                                  std::to_string(seed_)));
}

SeedResult SeedRun::execute(const std::string& seed_dir,
                            std::vector<int64_t>* task_ms, int stop_after) {
  const int k_stop = stop_after > 0 ? std::min(K_, stop_after) : K_;
  SeedResult res;
  res.seed = seed_;
  int current = 0;
  try {
    if (rows_.empty()) {
      rows_.push_back(eval_row());
      if (cfg_.write_checkpoints) write_checkpoint(seed_dir);
    }
    for (int j = completed_ + 1; j <= k_stop; ++j) {
      current = j;
      const auto t0 = std::chrono::steady_clock::now();
      train_task(j);
      completed_ = j;
      rows_.push_back(eval_row());
      const auto t1 = std::chrono::steady_clock::now();
      if (task_ms != nullptr)
        task_ms->push_back(
            std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0)
                .count());
      if (cfg_.write_checkpoints) write_checkpoint(seed_dir);
    }
    res.completed = completed_ == K_;
    if (!res.completed)
      res.error = "stopped after " + std::to_string(completed_) + " of " +
                  std::to_string(K_) + " tasks" +
                  (cfg_.write_checkpoints ? " (checkpoint saved)" : "");
  } catch (const Error& e) {
    res.error = "task " + std::to_string(current) + ": " + e.what();
  }
  res.records = records_;
  if (!res.completed) return res;

  res.matrix.K = K_;
  res.matrix.delta = double(cfg_.iters_train);
  res.matrix.p = rows_;
  res.matrix.validate();
  res.metrics.method = corl::to_string(cfg_.method);
  res.metrics.seed = seed_;
  res.metrics.order = cfg_.order;
  res.metrics.ap_final = average_performance(res.matrix, K_);
  if (cfg_.method == Method::kMtl) {
    // Joint training has no task boundaries, so the sequential transfer
    // metrics do not apply.
    res.metrics.forgetting = std::numeric_limits<double>::quiet_NaN();
    res.metrics.fwt = std::numeric_limits<double>::quiet_NaN();
  } else {
    res.metrics.forgetting = forgetting(res.matrix);
    res.metrics.fwt = forward_transfer(res.matrix);
  }
  write_seed_reports(seed_dir, res.matrix);
  return res;
}

// ----------------------------- run directory -----------------------------

nlohmann::json fairness_fields(const ExperimentConfig& cfg) {
  return {{"suite_path", cfg.suite_path},
          {"order", cfg.order},
          {"repeat", cfg.repeat},
          {"iters_train", cfg.iters_train},
          {"iters_warmup", cfg.iters_warmup},
          {"batch", cfg.batch},
          {"eval_episodes", cfg.eval_episodes},
          {"lr", cfg.lr},
          {"episodes_per_task", cfg.episodes_per_task},
          {"data_seed", cfg.data_seed},
          {"target_return_pct", cfg.target_return_pct},
          {"backbone", backbone_json(cfg.backbone)}};
}

// Every run under one study root must share the protocol fields that make
// methods comparable; the first run pins them.
void enforce_study_contract(const ExperimentConfig& cfg) {
  const std::string path = cfg.resolved_out_root() + "/study_contract.json";
  const std::string want = hex64(cfg.fairness_hash());
  if (fs::exists(path)) {
    nlohmann::json have = nlohmann::json::parse(read_text_file(path));
    CORL_CHECK(have.at("fairness_hash").get<std::string>() == want,
               "study root already holds runs under a different shared "
               "protocol (suite/order/budgets/backbone/data/eval); refusing "
               "to mix: " + path);
    return;
  }
  nlohmann::json contract = {{"format_version", 1},
                             {"fairness_hash", want},
                             {"protocol", fairness_fields(cfg)}};
  write_text_file(path, contract.dump(2) + "\n");
}

nlohmann::json seed_entry_json(const SeedResult& res) {
  nlohmann::json recs = nlohmann::json::array();
  for (const TaskRecord& r : res.records) recs.push_back(r.to_json());
  nlohmann::json j = {{"seed", res.seed},
                      {"completed", res.completed},
                      {"error", res.error},
                      {"records", std::move(recs)}};
  if (res.completed) {
    j["metrics"] = {{"AP_final", res.metrics.ap_final},
                    {"F", res.metrics.forgetting},
                    {"FWT", res.metrics.fwt}};
    j["matrix"] = res.matrix.p;
  }
  return j;
}

MetricRow metric_row_from_entry(const ExperimentConfig& cfg,
                                const nlohmann::json& e) {
  MetricRow row;
  row.method = to_string(cfg.method);
  row.seed = e.at("seed").get<uint64_t>();
  row.order = cfg.order;
  row.ap_final = e.at("metrics").at("AP_final").get<double>();
  row.forgetting = e.at("metrics").at("F").get<double>();
  row.fwt = e.at("metrics").at("FWT").get<double>();
  return row;
}

// The manifest is the deterministic record of a run; metrics.csv is derived
// from it so both stay in lockstep when a resumed seed rewrites its entry.
void write_run_reports(const ExperimentConfig& cfg,
                       const std::vector<int>& seq,
                       const nlohmann::json& seed_entries) {
  const std::string rdir = cfg.run_dir();
  nlohmann::json manifest = {{"format_version", 1},
                             {"config", cfg.to_json()},
                             {"config_hash", hex64(cfg.config_hash())},
                             {"fairness_hash", hex64(cfg.fairness_hash())},
                             {"sequence", seq},
                             {"seeds", seed_entries}};
  write_text_file(rdir + "/run_manifest.json", manifest.dump(2) + "\n");
  std::vector<MetricRow> rows;
  for (const auto& e : seed_entries)
    if (e.at("completed").get<bool>()) rows.push_back(metric_row_from_entry(cfg, e));
  write_text_file(rdir + "/metrics.csv", metrics_csv(rows));
}

std::string seed_dir_for(const ExperimentConfig& cfg, uint64_t seed) {
  return cfg.run_dir() + "/seed_" + std::to_string(seed);
}

std::map<int, EpisodeSet> load_run_data(const ExperimentConfig& cfg,
                                        const SuiteSpec& suite,
                                        const std::vector<int>& seq) {
  std::map<int, EpisodeSet> data;
  for (int id : seq)
    if (data.count(id) == 0) data.emplace(id, obtain_dataset(cfg, suite_task(suite, id)));
  return data;
}

}  // namespace

// ----------------------------- operations -----------------------------

RunResult run_experiment(const ExperimentConfig& cfg, int stop_after_tasks) {
  cfg.validate();
  CORL_CHECK(stop_after_tasks >= 0, "stop_after_tasks must be non-negative");
  SuiteSpec suite = load_suite(cfg.suite_path);
  std::vector<int> seq = task_sequence(suite, cfg.order, cfg.repeat);
  std::map<int, EpisodeSet> data = load_run_data(cfg, suite, seq);

  fs::create_directories(cfg.run_dir());
  enforce_study_contract(cfg);

  RunResult rr;
  rr.run_dir = cfg.run_dir();
  rr.all_completed = true;
  nlohmann::json seed_entries = nlohmann::json::array();
  nlohmann::json timing_entries = nlohmann::json::array();
  for (uint64_t seed : cfg.seeds) {
    SeedRun run(cfg, suite, data, seed);
    run.init_fresh();
    const std::string sdir = seed_dir_for(cfg, seed);
    fs::create_directories(sdir);
    std::vector<int64_t> task_ms;
    const auto t0 = std::chrono::steady_clock::now();
    SeedResult res = run.execute(sdir, &task_ms, stop_after_tasks);
    const auto t1 = std::chrono::steady_clock::now();
    timing_entries.push_back(
        {{"seed", seed},
         {"task_ms", task_ms},
         {"total_ms",
          std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0)
              .count()}});
    if (!res.completed) rr.all_completed = false;
    seed_entries.push_back(seed_entry_json(res));
    rr.seeds.push_back(std::move(res));
  }
  write_run_reports(cfg, seq, seed_entries);
  // Wall-clock data is useful but never deterministic, so it lives apart
  // from the manifest.
  write_text_file(cfg.run_dir() + "/timings.json",
                  nlohmann::json({{"seeds", timing_entries}}).dump(2) + "\n");
  return rr;
}

SeedResult resume_seed(const ExperimentConfig& cfg,
                       const std::string& checkpoint_path) {
  cfg.validate();
  nlohmann::json ck = nlohmann::json::parse(read_text_file(checkpoint_path));
  const uint64_t seed = ck.at("seed").get<uint64_t>();
  SuiteSpec suite = load_suite(cfg.suite_path);
  std::vector<int> seq = task_sequence(suite, cfg.order, cfg.repeat);
  std::map<int, EpisodeSet> data = load_run_data(cfg, suite, seq);

  fs::create_directories(cfg.run_dir());
  enforce_study_contract(cfg);

  SeedRun run(cfg, suite, data, seed);
  run.load_state(ck);
  const std::string sdir = seed_dir_for(cfg, seed);
  fs::create_directories(sdir);
  std::vector<int64_t> task_ms;
  SeedResult res = run.execute(sdir, &task_ms);

  // Rewrite the run-level reports with this seed's entry replacing (or
  // joining) whatever the manifest held for it.
  nlohmann::json entries = nlohmann::json::array();
  const std::string mpath = cfg.run_dir() + "/run_manifest.json";
  if (fs::exists(mpath)) {
    nlohmann::json manifest = nlohmann::json::parse(read_text_file(mpath));
    CORL_CHECK(manifest.at("config_hash").get<std::string>() ==
                   hex64(cfg.config_hash()),
               "run directory holds a manifest for a different config; "
               "refusing to mix results");
    entries = manifest.at("seeds");
  }
  bool replaced = false;
  nlohmann::json entry = seed_entry_json(res);
  for (auto& e : entries)
    if (e.at("seed").get<uint64_t>() == seed) {
      e = entry;
      replaced = true;
    }
  if (!replaced) entries.push_back(std::move(entry));
  write_run_reports(cfg, seq, entries);
  return res;
}

std::vector<double> eval_checkpoint(const ExperimentConfig& cfg,
                                    const std::string& checkpoint_path) {
  cfg.validate();
  nlohmann::json ck = nlohmann::json::parse(read_text_file(checkpoint_path));
  const uint64_t seed = ck.at("seed").get<uint64_t>();
  SuiteSpec suite = load_suite(cfg.suite_path);
  std::vector<int> seq = task_sequence(suite, cfg.order, cfg.repeat);
  std::map<int, EpisodeSet> data = load_run_data(cfg, suite, seq);
  SeedRun run(cfg, suite, data, seed);
  run.load_state(ck);
  return run.eval_row();
}

std::string sweep(const ExperimentConfig& cfg,
                  const std::vector<double>& lambdas) {
  CORL_CHECK(!lambdas.empty(), "sweep needs at least one lambda");
  const std::string base = cfg.resolved_run_name();
  std::string csv = "lambda,AP_final,F,FWT\n";
  for (size_t i = 0; i < lambdas.size(); ++i) {
    ExperimentConfig c = cfg;
    c.lambda = lambdas[i];
    c.run_name = base + "-lam" + std::to_string(i);
    double ap = std::numeric_limits<double>::quiet_NaN();
    double f = std::numeric_limits<double>::quiet_NaN();
    double fwt = std::numeric_limits<double>::quiet_NaN();
    try {
      RunResult rr = run_experiment(c);
      double sap = 0, sf = 0, sfwt = 0;
      int n = 0;
      for (const SeedResult& s : rr.seeds) {
        if (!s.completed) continue;
        sap += s.metrics.ap_final;
        sf += s.metrics.forgetting;
        sfwt += s.metrics.fwt;
        ++n;
      }
      if (n > 0) {
        ap = sap / n;
        f = sf / n;
        fwt = sfwt / n;
      }
    } catch (const Error&) {
      // an unrunnable cell reports nan entries rather than killing the grid
    }
    csv += fmt_double(lambdas[i]) + "," + fmt_double(ap) + "," + fmt_double(f) +
           "," + fmt_double(fwt) + "\n";
  }
  return csv;
}

std::string orders_text(const SuiteSpec& suite) {
  std::string out = "suite " + suite.name + ": " +
                    std::to_string(suite.tasks.size()) + " tasks\n";
  for (const TaskSpec& t : suite.tasks)
    out += "  task " + std::to_string(t.id) + ": " + t.name + "\n";
  for (size_t i = 0; i < suite.orders.size(); ++i) {
    out += "order " + std::to_string(i) + ":";
    for (int id : suite.orders[i]) out += " " + std::to_string(id);
    out += "\n";
  }
  return out;
}

}  // namespace corl
