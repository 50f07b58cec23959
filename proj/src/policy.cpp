#include "corl/policy.hpp"

#include <cmath>

#include "corl/common.hpp"

namespace corl {

void head_init(ParamStore& store, const std::string& prefix, int h,
               int action_dim, Rng& rng) {
  store.add_uniform(prefix + "W0", {h, 2 * h}, 2 * h, rng);
  store.add(prefix + "b0", {h});
  store.add_uniform(prefix + "W1", {action_dim, h}, h, rng);
  store.add(prefix + "b1", {action_dim});
}

std::vector<std::string> head_param_names(const std::string& prefix) {
  return {prefix + "W0", prefix + "b0", prefix + "W1", prefix + "b1"};
}

Tensor head_forward(ParamStore& store, const std::string& prefix,
                    const Tensor& x2h, HeadCache* cache) {
  LinearSite s0{&store.get(prefix + "W0"), &store.get(prefix + "b0"), nullptr,
                nullptr, nullptr};
  LinearSite s1{&store.get(prefix + "W1"), &store.get(prefix + "b1"), nullptr,
                nullptr, nullptr};
  Tensor mid = relu_forward(linear_forward(s0, x2h, cache ? &cache->c0 : nullptr),
                            cache ? &cache->relu_mask : nullptr);
  return linear_forward(s1, mid, cache ? &cache->c1 : nullptr);
}

Tensor head_backward(ParamStore& store, const std::string& prefix,
                     const HeadCache& cache, const Tensor& dpred) {
  LinearSite s0{&store.get(prefix + "W0"), &store.get(prefix + "b0"), nullptr,
                nullptr, nullptr};
  LinearSite s1{&store.get(prefix + "W1"), &store.get(prefix + "b1"), nullptr,
                nullptr, nullptr};
  Tensor dmid = linear_backward(s1, cache.c1, dpred);
  return linear_backward(s0, cache.c0, relu_backward(cache.relu_mask, dmid));
}

Tensor pack_head_input(const Tensor& feat, const Tensor& compose) {
  CORL_CHECK(feat.ndim() == 3, "features must be [B,M,h]");
  const int B = feat.dim(0), M = feat.dim(1), h = feat.dim(2);
  const bool has_ctx = compose.size() != 0;
  if (has_ctx)
    CORL_CHECK(compose.same_shape(feat), "context shape mismatch");
  Tensor out({B * M, 2 * h});
  for (int64_t p = 0; p < int64_t(B) * M; ++p)
    for (int d = 0; d < h; ++d) {
      out[p * 2 * h + d] = feat[p * h + d];
      if (has_ctx) out[p * 2 * h + h + d] = compose[p * h + d];
    }
  return out;
}

void unpack_head_grad(const Tensor& dx2h, int B, int M, int h, Tensor* dfeat,
                      Tensor* dcompose) {
  CORL_CHECK(dx2h.ndim() == 2 && dx2h.dim(0) == B * M && dx2h.dim(1) == 2 * h,
             "head grad shape mismatch");
  if (dfeat) *dfeat = Tensor({B, M, h});
  if (dcompose) *dcompose = Tensor({B, M, h});
  for (int64_t p = 0; p < int64_t(B) * M; ++p)
    for (int d = 0; d < h; ++d) {
      if (dfeat) (*dfeat)[p * h + d] = dx2h[p * 2 * h + d];
      if (dcompose) (*dcompose)[p * h + d] = dx2h[p * 2 * h + h + d];
    }
}

double dt_train_step(ParamStore& store, const BackboneConfig& cfg,
                     const BackboneBinding& bind, const std::string& head_prefix,
                     const EpisodeSet& data, int batch, Adam& opt,
                     Rng& sample_rng, Rng& drop_rng, const DtStepHooks& hooks) {
  WindowBatch wb = sample_windows(data, batch, cfg.window, sample_rng);
  store.zero_grads();

  BackboneCache cache;
  Tensor feat;
  if (hooks.zero_feature_half)
    feat = Tensor({wb.B, wb.M, cfg.h});
  else
    feat = backbone_features(store, cfg, bind, wb, true, &drop_rng, &cache);
  Tensor ctx;
  if (hooks.compose_fwd) ctx = hooks.compose_fwd(wb);
  Tensor x2h = pack_head_input(feat, ctx);

  HeadCache hc;
  Tensor pred = head_forward(store, head_prefix, x2h, &hc);
  pred.shape = {wb.B, wb.M, cfg.action_dim};
  Tensor dpred;
  double loss = masked_mse(pred, wb.actions, wb.loss_mask, &dpred);

  dpred.shape = {wb.B * wb.M, cfg.action_dim};
  Tensor dx2h = head_backward(store, head_prefix, hc, dpred);
  Tensor dfeat, dctx;
  unpack_head_grad(dx2h, wb.B, wb.M, cfg.h, &dfeat,
                   hooks.compose_bwd ? &dctx : nullptr);

  if (!hooks.zero_feature_half) {
    if (hooks.feature_loss) loss += hooks.feature_loss(wb, feat, dfeat);
    backbone_backward(store, cfg, bind, wb, cache, dfeat);
  }
  if (hooks.compose_bwd) hooks.compose_bwd(dctx);
  if (hooks.param_penalty) loss += hooks.param_penalty();

  CORL_CHECK(std::isfinite(loss), "training loss diverged");
  if (hooks.post_backward) hooks.post_backward();
  opt.step(store);
  return loss;
}

EvalResult eval_rollout(ParamStore& store, const BackboneConfig& cfg,
                        const BackboneBinding& bind,
                        const std::string& head_prefix,
                        const ComposeEvalFn& compose, const TaskSpec& task,
                        int episodes, uint64_t seed, double target_return,
                        bool zero_features) {
  const int E = episodes, M = cfg.window;
  const int S = cfg.state_dim, A = cfg.action_dim;
  CORL_CHECK(E > 0, "rollout needs at least one episode");
  CORL_CHECK(task.horizon <= cfg.max_timestep,
             "horizon exceeds the timestep table");

  std::vector<EnvState> env(static_cast<size_t>(E));
  std::vector<double> hist_states, hist_actions, hist_rtg;
  hist_states.assign(size_t(E) * task.horizon * S, 0.0);
  hist_actions.assign(size_t(E) * task.horizon * A, 0.0);
  hist_rtg.assign(size_t(E) * task.horizon, 0.0);
  std::vector<double> rtg(size_t(E), target_return), ret(size_t(E), 0.0);
  std::vector<uint8_t> aborted(size_t(E), 0);

  for (int e = 0; e < E; ++e) {
    Rng rng(stream_seed(seed, "eval", {uint64_t(task.id), uint64_t(e)}));
    env[size_t(e)] = env_reset(task, rng);
  }

  WindowBatch wb = make_window_batch(E, M, S, A);
  for (int t = 0; t < task.horizon; ++t) {
    // Record the current state and a placeholder action, then fill windows.
    for (int e = 0; e < E; ++e) {
      double obs[6];
      observe(env[size_t(e)], task, obs);
      for (int i = 0; i < S; ++i)
        hist_states[(size_t(e) * task.horizon + t) * S + size_t(i)] = obs[i];
      hist_rtg[size_t(e) * task.horizon + t] = rtg[size_t(e)];
    }
    wb.rtg.zero();
    wb.states.zero();
    wb.actions.zero();
    std::fill(wb.timesteps.begin(), wb.timesteps.end(), 0);
    std::fill(wb.loss_mask.begin(), wb.loss_mask.end(), 0);
    const int n = std::min(t + 1, M);
    for (int e = 0; e < E; ++e)
      for (int k = 0; k < n; ++k) {
        const int step = t - n + 1 + k;
        const int slot = M - n + k;
        const size_t fl = size_t(e) * M + size_t(slot);
        wb.rtg[int64_t(fl)] = hist_rtg[size_t(e) * task.horizon + step];
        for (int i = 0; i < S; ++i)
          wb.states[int64_t(fl) * S + i] =
              hist_states[(size_t(e) * task.horizon + step) * S + size_t(i)];
        for (int i = 0; i < A; ++i)
          wb.actions[int64_t(fl) * A + i] =
              hist_actions[(size_t(e) * task.horizon + step) * A + size_t(i)];
        wb.timesteps[fl] = step + 1;
        wb.loss_mask[fl] = 1;
      }

    Tensor feat;
    if (zero_features)
      feat = Tensor({E, M, cfg.h});
    else
      feat = backbone_features(store, cfg, bind, wb, false, nullptr, nullptr);
    Tensor ctx;
    if (compose) ctx = compose(wb);
    Tensor pred = head_forward(store, head_prefix, pack_head_input(feat, ctx),
                               nullptr);
    for (int e = 0; e < E; ++e) {
      double a[2] = {pred[(int64_t(e) * M + M - 1) * A + 0],
                     pred[(int64_t(e) * M + M - 1) * A + 1]};
      if (!std::isfinite(a[0]) || !std::isfinite(a[1])) {
        aborted[size_t(e)] = 1;
        a[0] = a[1] = 0.0;
      }
      const double r = env_step(task, env[size_t(e)], a);
      hist_actions[(size_t(e) * task.horizon + t) * A + 0] = a[0];
      hist_actions[(size_t(e) * task.horizon + t) * A + 1] = a[1];
      rtg[size_t(e)] -= r;
      ret[size_t(e)] += r;
    }
  }

  EvalResult res;
  for (int e = 0; e < E; ++e) {
    const bool ok = env[size_t(e)].success && !aborted[size_t(e)];
    res.success_rate += ok ? 1.0 / E : 0.0;
    res.mean_return += ret[size_t(e)] / E;
    if (aborted[size_t(e)]) res.nan_abort = true;
  }
  return res;
}

}  // namespace corl
