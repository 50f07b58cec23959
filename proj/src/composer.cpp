#include "corl/composer.hpp"

#include <cctype>
#include <cmath>
#include <fstream>

#include "corl/adam.hpp"
#include "corl/common.hpp"
#include "corl/ops.hpp"

#include "json.hpp"

namespace corl {

ComposeMode compose_mode_from_string(const std::string& s) {
  if (s == "attentive") return ComposeMode::kAttentive;
  if (s == "direct-add") return ComposeMode::kDirectAdd;
  if (s == "layer-share") return ComposeMode::kLayerShare;
  if (s == "none") return ComposeMode::kNone;
  throw std::runtime_error("unknown compose mode: " + s);
}

std::string to_string(ComposeMode mode) {
  switch (mode) {
    case ComposeMode::kAttentive: return "attentive";
    case ComposeMode::kDirectAdd: return "direct-add";
    case ComposeMode::kLayerShare: return "layer-share";
    case ComposeMode::kNone: return "none";
  }
  throw std::runtime_error("bad compose mode value");
}

// ----------------------------- embeddings -----------------------------

Tensor embed_task_text(const std::string& description, int dim) {
  CORL_CHECK(dim > 0, "embedding dimension must be positive");
  Tensor e({dim});
  bool any = false;
  std::string token;
  auto flush = [&] {
    if (token.empty()) return;
    const uint64_t h = fnv1a_str(token);
    const int bucket = int(h % uint64_t(dim));
    const double sign = ((h >> 32) & 1) ? 1.0 : -1.0;
    e[bucket] += sign;
    any = true;
    token.clear();
  };
  for (char c : description) {
    if (std::isalnum(static_cast<unsigned char>(c)))
      token.push_back(char(std::tolower(static_cast<unsigned char>(c))));
    else
      flush();
  }
  flush();
  CORL_CHECK(any, "task description has no tokens");
  double norm = 0.0;
  for (double v : e.v) norm += v * v;
  if (norm == 0.0) {
    // Signed buckets cancelled exactly; fall back to a fixed unit vector so
    // the output stays deterministic and unit-norm.
    e[0] = 1.0;
    return e;
  }
  norm = std::sqrt(norm);
  for (double& v : e.v) v /= norm;
  return e;
}

std::map<int, Tensor> load_embedding_file(const std::string& path, int dim) {
  std::ifstream in(path);
  CORL_CHECK(in.good(), "cannot open embedding file: " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  CORL_CHECK(j.at("dim").get<int>() == dim,
             "embedding file dimension does not match the configuration");
  std::map<int, Tensor> out;
  for (const auto& [key, arr] : j.at("embeddings").items()) {
    Tensor e({dim});
    CORL_CHECK(int(arr.size()) == dim, "embedding row has wrong length");
    double norm = 0.0;
    for (int i = 0; i < dim; ++i) {
      e[i] = arr[size_t(i)].get<double>();
      norm += e[i] * e[i];
    }
    CORL_CHECK(norm > 0.0, "embedding row is all zero");
    norm = std::sqrt(norm);
    for (double& v : e.v) v /= norm;
    out[std::stoi(key)] = std::move(e);
  }
  return out;
}

// ----------------------------- attention -----------------------------

void composer_assign(ParamStore& store, const std::string& tag, int text_dim,
                     int h, Rng& rng) {
  const std::string base = "comp." + tag + ".";
  CORL_CHECK(!store.has(base + "Wq"), "attention already assigned for tag");
  Param& wq = store.add_uniform(base + "Wq", {text_dim, h}, text_dim, rng);
  Param& wk = store.add(base + "Wk", {text_dim, h});
  wk.value = wq.value;  // queries and keys start in the same projection
}

std::vector<std::string> composer_param_names(const std::string& tag) {
  return {"comp." + tag + ".Wq", "comp." + tag + ".Wk"};
}

std::vector<double> compose_weights(ParamStore& store, const std::string& tag,
                                    const Tensor& ek,
                                    const std::vector<PriorPolicy>& priors,
                                    ComposeWeightsCache* cache) {
  CORL_CHECK(!priors.empty(), "composition needs at least one prior policy");
  const Tensor& wq = store.get("comp." + tag + ".Wq").value;
  const Tensor& wk = store.get("comp." + tag + ".Wk").value;
  const int d = wq.dim(0), h = wq.dim(1);
  CORL_CHECK(ek.size() == d, "task embedding width mismatch");
  const int P = int(priors.size());

  // The maps are applied as e W with W stored [d, h]; small enough that the
  // plain loops beat reshaping into the row-major matmul kernels.
  Tensor q({h});
  for (int j = 0; j < h; ++j) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += ek[i] * wq[int64_t(i) * h + j];
    q[j] = s;
  }
  Tensor K({P, h});
  for (int p = 0; p < P; ++p) {
    const Tensor& ep = priors[size_t(p)].embedding;
    CORL_CHECK(ep.size() == d, "prior embedding width mismatch");
    for (int j = 0; j < h; ++j) {
      double s = 0.0;
      for (int i = 0; i < d; ++i) s += ep[i] * wk[int64_t(i) * h + j];
      K.at2(p, j) = s;
    }
  }
  const double scale = 1.0 / std::sqrt(double(d));
  std::vector<double> logits(size_t(P), 0.0);
  for (int p = 0; p < P; ++p) {
    double s = 0.0;
    for (int j = 0; j < h; ++j) s += q[j] * K.at2(p, j);
    logits[size_t(p)] = s * scale;
  }
  std::vector<double> w = softmax(logits);
  if (cache) {
    cache->q = q;
    cache->K = K;
    cache->w = w;
  }
  return w;
}

void compose_weights_backward(ParamStore& store, const std::string& tag,
                              const Tensor& ek,
                              const std::vector<PriorPolicy>& priors,
                              const ComposeWeightsCache& cache,
                              const std::vector<double>& dw) {
  Param& wq = store.get("comp." + tag + ".Wq");
  Param& wk = store.get("comp." + tag + ".Wk");
  const int d = wq.value.dim(0), h = wq.value.dim(1);
  const int P = int(priors.size());
  const double scale = 1.0 / std::sqrt(double(d));

  const std::vector<double> dlogits = softmax_backward(cache.w, dw);
  Tensor dq({h});
  for (int p = 0; p < P; ++p)
    for (int j = 0; j < h; ++j) dq[j] += dlogits[size_t(p)] * cache.K.at2(p, j) * scale;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < h; ++j) wq.grad[int64_t(i) * h + j] += ek[i] * dq[j];
  for (int p = 0; p < P; ++p) {
    const Tensor& ep = priors[size_t(p)].embedding;
    const double g = dlogits[size_t(p)] * scale;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < h; ++j)
        wk.grad[int64_t(i) * h + j] += ep[i] * g * cache.q[j];
  }
}

// ----------------------------- orchestration -----------------------------

void Composer::set_task(const std::string& attn_tag, const Tensor& ek) {
  tag_ = attn_tag;
  ek_ = ek;
}

std::vector<double> Composer::attention(ParamStore& store) const {
  if (!active()) return {};
  switch (ccfg_.mode) {
    case ComposeMode::kAttentive:
      return compose_weights(store, tag_, ek_, priors_, nullptr);
    case ComposeMode::kDirectAdd:
      return std::vector<double>(priors_.size(), 1.0 / double(priors_.size()));
    default:
      return {};
  }
}

Tensor Composer::prior_features(ParamStore& store, const WindowBatch& wb,
                                const PriorPolicy& p) const {
  return backbone_features(store, cfg_, p.binding, wb, false, nullptr, nullptr);
}

Tensor Composer::context(ParamStore& store, const WindowBatch& wb) const {
  if (!active()) return Tensor();
  Tensor ctx({wb.B, wb.M, cfg_.h});
  switch (ccfg_.mode) {
    case ComposeMode::kAttentive: {
      const std::vector<double> w =
          compose_weights(store, tag_, ek_, priors_, nullptr);
      for (size_t p = 0; p < priors_.size(); ++p) {
        Tensor phi = prior_features(store, wb, priors_[p]);
        for (int64_t i = 0; i < ctx.size(); ++i) ctx[i] += w[p] * phi[i];
      }
      return ctx;
    }
    case ComposeMode::kDirectAdd: {
      for (const PriorPolicy& p : priors_) {
        Tensor phi = prior_features(store, wb, p);
        for (int64_t i = 0; i < ctx.size(); ++i) ctx[i] += phi[i];
      }
      return ctx;
    }
    case ComposeMode::kLayerShare:
      // The shared trunk itself provides the context.
      return backbone_features(store, cfg_, share_binding_, wb, false,
                               nullptr, nullptr);
    case ComposeMode::kNone:
      return Tensor();
  }
  return Tensor();
}

ComposeEvalFn Composer::eval_fn(ParamStore& store) const {
  if (!active()) return nullptr;
  return [this, &store](const WindowBatch& wb) { return context(store, wb); };
}

void Composer::attach_hooks(ParamStore& store, DtStepHooks& hooks) {
  if (!active()) return;
  if (ccfg_.mode != ComposeMode::kAttentive) {
    hooks.compose_fwd = [this, &store](const WindowBatch& wb) {
      return context(store, wb);
    };
    return;  // nothing upstream to train
  }
  hooks.compose_fwd = [this, &store](const WindowBatch& wb) {
    const std::vector<double> w =
        compose_weights(store, tag_, ek_, priors_, &step_attn_);
    step_phi_.clear();
    Tensor ctx({wb.B, wb.M, cfg_.h});
    for (size_t p = 0; p < priors_.size(); ++p) {
      step_phi_.push_back(prior_features(store, wb, priors_[p]));
      const Tensor& phi = step_phi_.back();
      for (int64_t i = 0; i < ctx.size(); ++i) ctx[i] += w[p] * phi[i];
    }
    return ctx;
  };
  hooks.compose_bwd = [this, &store](const Tensor& dctx) {
    std::vector<double> dw(priors_.size(), 0.0);
    for (size_t p = 0; p < priors_.size(); ++p) {
      const Tensor& phi = step_phi_[p];
      double s = 0.0;
      for (int64_t i = 0; i < dctx.size(); ++i) s += dctx[i] * phi[i];
      dw[p] = s;
    }
    compose_weights_backward(store, tag_, ek_, priors_, step_attn_, dw);
    step_phi_.clear();
  };
}

WarmupOutcome warmup_and_decide(ParamStore& store, const BackboneConfig& cfg,
                                Composer& comp, const std::string& attn_tag,
                                const std::string& head_prefix,
                                const EpisodeSet& data, const TaskSpec& task,
                                int batch, double lr, Rng& init_rng,
                                uint64_t train_seed, uint64_t eval_seed,
                                int eval_episodes, double target_return) {
  WarmupOutcome out;
  if (!comp.active()) return out;  // forced new sub-network, nothing to train
  const ComposerConfig& ccfg = comp.config();

  std::vector<std::string> train_names = head_param_names(head_prefix);
  if (ccfg.mode == ComposeMode::kAttentive) {
    composer_assign(store, attn_tag, ccfg.text_dim, cfg.h, init_rng);
    for (const auto& n : composer_param_names(attn_tag))
      train_names.push_back(n);
  }

  Adam opt(lr);
  opt.attach(store, train_names);
  Rng sample(stream_seed(train_seed, "warmup-sample", {uint64_t(task.id)}));
  Rng drop(stream_seed(train_seed, "warmup-drop", {uint64_t(task.id)}));
  DtStepHooks hooks;
  hooks.zero_feature_half = true;
  comp.attach_hooks(store, hooks);
  out.losses.reserve(size_t(ccfg.warmup_iters));
  for (int i = 0; i < ccfg.warmup_iters; ++i)
    out.losses.push_back(dt_train_step(store, cfg, BackboneBinding{},
                                       head_prefix, data, batch, opt, sample,
                                       drop, hooks));

  out.eval = eval_rollout(store, cfg, BackboneBinding{}, head_prefix,
                          comp.eval_fn(store), task, eval_episodes, eval_seed,
                          target_return, /*zero_features=*/true);
  out.attention = comp.attention(store);
  out.reuse = out.eval.success_rate >= ccfg.eta;
  out.ran = true;
  return out;
}

}  // namespace corl
