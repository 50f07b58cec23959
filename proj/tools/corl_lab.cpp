// Command-line front end for the continual offline RL laboratory: dataset
// generation, study runs, checkpoint resume/eval, regularizer sweeps, and
// suite inspection. Every experiment knob is a flag; --config loads the same
// keys from a JSON file first, with flags overriding.

#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "corl/common.hpp"
#include "corl/metrics.hpp"
#include "corl/runner.hpp"
#include "corl/world.hpp"

namespace {

struct CliConfig {
  corl::ExperimentConfig cfg;
  std::string method;
  std::string compose_mode;
  std::string config_file;
  bool no_checkpoints = false;
};

// Applies a JSON config file before flag parsing so flags win.
corl::ExperimentConfig preload_config(int argc, char** argv) {
  std::string path;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) path = argv[i + 1];
    else if (a.rfind("--config=", 0) == 0) path = a.substr(9);
  }
  if (path.empty()) return corl::ExperimentConfig{};
  return corl::ExperimentConfig::from_json(
      nlohmann::json::parse(corl::read_text_file(path)));
}

void attach_options(CLI::App* sub, CliConfig& c) {
  c.method = corl::to_string(c.cfg.method);
  c.compose_mode = corl::to_string(c.cfg.compose_mode);
  sub->add_option("--config", c.config_file,
                  "JSON config file (applied before flags)");
  sub->add_option("--method", c.method,
                  "compoformer-grow|compoformer-prune|grow-nocompose|"
                  "prune-nocompose|finetune|l2|ewc|mas|lwf|agem|pm|mtl");
  sub->add_option("--compose-mode", c.compose_mode,
                  "attentive|direct-add|layer-share|none");
  sub->add_option("--suite", c.cfg.suite_path,
                  "suite manifest path (empty = built-in)");
  sub->add_option("--order", c.cfg.order, "task-order index");
  sub->add_option("--repeat", c.cfg.repeat, "1 or 2 passes over the order");
  sub->add_option("--seeds", c.cfg.seeds, "training seeds")->delimiter(',');
  sub->add_option("--iters-train", c.cfg.iters_train, "per-task iterations");
  sub->add_option("--iters-warmup", c.cfg.iters_warmup, "warmup iterations");
  sub->add_option("--eta", c.cfg.eta, "reuse threshold on warmup success");
  sub->add_option("--batch", c.cfg.batch, "batch size");
  sub->add_option("--eval-episodes", c.cfg.eval_episodes,
                  "episodes per evaluation");
  sub->add_option("--lr", c.cfg.lr, "Adam learning rate");
  sub->add_option("--lambda", c.cfg.lambda,
                  "regularizer strength (<0 = per-method default)");
  sub->add_option("--lora-rank", c.cfg.lora_rank, "adapter rank");
  sub->add_option("--keep-fraction", c.cfg.keep_fraction,
                  "weight share claimed per packing task");
  sub->add_option("--retrain-fraction", c.cfg.retrain_fraction,
                  "post-claim retrain share of iters-train");
  sub->add_option("--mix-ratio", c.cfg.mix_ratio,
                  "current-task share of rehearsal batches");
  sub->add_option("--importance-samples", c.cfg.importance_samples,
                  "samples per importance update");
  sub->add_option("--text-dim", c.cfg.text_dim, "task-text embedding width");
  sub->add_option("--embedding-file", c.cfg.embedding_file,
                  "external task embeddings (JSON)");
  sub->add_option("--episodes-per-task", c.cfg.episodes_per_task,
                  "dataset episodes per task");
  sub->add_option("--data-seed", c.cfg.data_seed, "dataset stream seed");
  sub->add_option("--target-return-pct", c.cfg.target_return_pct,
                  "return-conditioning percentile");
  sub->add_option("--out", c.cfg.out_dir, "study root directory");
  sub->add_option("--name", c.cfg.run_name, "run directory name");
  sub->add_flag("--no-checkpoints", c.no_checkpoints,
                "skip per-boundary checkpoint files");
  sub->add_option("--layers", c.cfg.backbone.layers, "transformer layers");
  sub->add_option("--heads", c.cfg.backbone.heads, "attention heads");
  sub->add_option("--width", c.cfg.backbone.h, "token width");
  sub->add_option("--state-dim", c.cfg.backbone.state_dim, "state width");
  sub->add_option("--action-dim", c.cfg.backbone.action_dim, "action width");
  sub->add_option("--window", c.cfg.backbone.window, "training window steps");
  sub->add_option("--max-timestep", c.cfg.backbone.max_timestep,
                  "time-embedding capacity");
  sub->add_option("--dropout", c.cfg.backbone.dropout, "dropout rate");
  sub->add_option("--rtg-scale", c.cfg.backbone.rtg_scale,
                  "return-to-go input scale");
}

corl::ExperimentConfig finalize(CliConfig& c) {
  c.cfg.method = corl::method_from_string(c.method);
  c.cfg.compose_mode = corl::compose_mode_from_string(c.compose_mode);
  if (c.no_checkpoints) c.cfg.write_checkpoints = false;
  return c.cfg;
}

void print_seed_line(const corl::SeedResult& s) {
  if (!s.completed) {
    std::printf("seed %llu: aborted (%s)\n",
                (unsigned long long)s.seed, s.error.c_str());
    return;
  }
  int reused = 0;
  for (const corl::TaskRecord& r : s.records) reused += r.reused ? 1 : 0;
  std::printf("seed %llu: AP_final=%s F=%s FWT=%s reuse=%d/%d\n",
              (unsigned long long)s.seed,
              corl::fmt_double(s.metrics.ap_final).c_str(),
              corl::fmt_double(s.metrics.forgetting).c_str(),
              corl::fmt_double(s.metrics.fwt).c_str(), reused,
              (int)s.records.size());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale continual offline RL laboratory"};
  app.require_subcommand(1);

  CliConfig base;
  try {
    base.cfg = preload_config(argc, argv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }

  CliConfig run_c = base, sweep_c = base, eval_c = base, resume_c = base,
            gen_c = base, orders_c = base;

  CLI::App* run = app.add_subcommand("run", "train a method over the suite");
  attach_options(run, run_c);
  int stop_after = 0;
  run->add_option("--stop-after", stop_after,
                  "halt each seed at this task boundary (0 = run all)");

  CLI::App* sw = app.add_subcommand("sweep", "one run per lambda value");
  attach_options(sw, sweep_c);
  std::vector<double> lambdas;
  sw->add_option("--lambdas", lambdas, "lambda grid")
      ->delimiter(',')
      ->required();

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint's policies");
  attach_options(ev, eval_c);
  std::string eval_ckpt;
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();

  CLI::App* rs = app.add_subcommand("resume", "continue a seed from its checkpoint");
  attach_options(rs, resume_c);
  std::string resume_ckpt;
  rs->add_option("--checkpoint", resume_ckpt, "checkpoint file")->required();

  CLI::App* gd = app.add_subcommand("gen-data",
                                    "write the suite's dataset files");
  attach_options(gd, gen_c);

  CLI::App* od = app.add_subcommand("orders", "list the suite's task orders");
  attach_options(od, orders_c);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      corl::ExperimentConfig cfg = finalize(run_c);
      corl::RunResult rr = corl::run_experiment(cfg, stop_after);
      for (const corl::SeedResult& s : rr.seeds) print_seed_line(s);
      std::printf("reports: %s\n", rr.run_dir.c_str());
      return rr.all_completed ? 0 : 1;
    }
    if (*sw) {
      corl::ExperimentConfig cfg = finalize(sweep_c);
      std::string csv = corl::sweep(cfg, lambdas);
      const std::string path = cfg.resolved_out_root() + "/" +
                               cfg.resolved_run_name() + "-sweep.csv";
      corl::write_text_file(path, csv);
      std::printf("%s", csv.c_str());
      std::printf("sweep table: %s\n", path.c_str());
      return 0;
    }
    if (*ev) {
      corl::ExperimentConfig cfg = finalize(eval_c);
      std::vector<double> row = corl::eval_checkpoint(cfg, eval_ckpt);
      corl::SuiteSpec suite = corl::load_suite(cfg.suite_path);
      std::vector<int> seq = corl::task_sequence(suite, cfg.order, cfg.repeat);
      for (size_t i = 0; i < row.size(); ++i)
        std::printf("task %d (position %zu): %s\n", seq[i], i + 1,
                    corl::fmt_double(row[i]).c_str());
      return 0;
    }
    if (*rs) {
      corl::ExperimentConfig cfg = finalize(resume_c);
      corl::SeedResult res = corl::resume_seed(cfg, resume_ckpt);
      print_seed_line(res);
      return res.completed ? 0 : 1;
    }
    if (*gd) {
      corl::ExperimentConfig cfg = finalize(gen_c);
      corl::gen_data(cfg);
      std::printf("datasets: %s\n", cfg.data_dir().c_str());
      return 0;
    }
    if (*od) {
      corl::ExperimentConfig cfg = finalize(orders_c);
      std::printf("%s", corl::orders_text(corl::load_suite(cfg.suite_path)).c_str());
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
