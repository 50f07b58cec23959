#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>

#include "corl/adam.hpp"
#include "corl/composer.hpp"
#include "corl/grad_check.hpp"
#include "corl/grow.hpp"
#include "corl/policy.hpp"
#include "corl/world.hpp"

using namespace corl;

namespace {

BackboneConfig small_cfg() {
  BackboneConfig cfg;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.h = 8;
  cfg.state_dim = 6;
  cfg.action_dim = 2;
  cfg.window = 4;
  cfg.max_timestep = 50;
  cfg.dropout = 0.0;
  cfg.rtg_scale = 50.0;
  return cfg;
}

WindowBatch fixed_batch(const BackboneConfig& cfg, uint64_t seed) {
  WindowBatch wb = make_window_batch(2, cfg.window, cfg.state_dim, cfg.action_dim);
  Rng rng(seed);
  for (auto& v : wb.rtg.v) v = rng.normal();
  for (auto& v : wb.states.v) v = rng.uniform(-1.0, 1.0);
  for (auto& v : wb.actions.v) v = rng.uniform(-1.0, 1.0);
  for (size_t i = 0; i < wb.timesteps.size(); ++i) {
    wb.timesteps[i] = int(i % cfg.window) + 1;
    wb.loss_mask[i] = 1;
  }
  return wb;
}

double cosine(const Tensor& a, const Tensor& b) {
  double num = 0.0, na = 0.0, nb = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) {
    num += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return num / std::sqrt(na * nb);
}

}  // namespace

TEST_CASE("task-text embeddings: determinism, norm, shared-token geometry") {
  Tensor a = embed_task_text("Push the puck left", 64);
  Tensor b = embed_task_text("push the puck LEFT!", 64);  // case/punct robust
  REQUIRE(a.size() == 64);
  for (int64_t i = 0; i < 64; ++i) CHECK(a[i] == b[i]);

  double norm = 0.0;
  for (double v : a.v) norm += v * v;
  CHECK(std::fabs(norm - 1.0) < 1e-12);

  Tensor left = embed_task_text("push the puck left", 64);
  Tensor right = embed_task_text("push the puck right", 64);
  Tensor valve = embed_task_text("rotate the valve", 64);
  CHECK(cosine(left, right) > cosine(left, valve));

  CHECK_THROWS(embed_task_text("", 64));
  CHECK_THROWS(embed_task_text(" .,! ", 64));
}

TEST_CASE("embedding file import: normalization and validation") {
  const std::string path = "/tmp/corl_test_embed.json";
  {
    std::ofstream out(path);
    out << R"({"dim": 4, "embeddings": {"1": [2, 0, 0, 0], "7": [0, 3, 4, 0]}})";
  }
  auto table = load_embedding_file(path, 4);
  REQUIRE(table.size() == 2);
  CHECK(table.at(1)[0] == 1.0);
  CHECK(std::fabs(table.at(7)[1] - 0.6) < 1e-12);
  CHECK(std::fabs(table.at(7)[2] - 0.8) < 1e-12);
  CHECK(table.count(2) == 0);
  CHECK_THROWS(load_embedding_file(path, 64));       // dim mismatch
  CHECK_THROWS(load_embedding_file("/nope.json", 4));
}

TEST_CASE("attention weights: simplex identities and hand values") {
  const int d = 6, h = 4;
  ParamStore store;
  Rng rng(5);
  composer_assign(store, "t3", d, h, rng);

  // Queries and keys start as the same map.
  const Tensor& wq = store.get("comp.t3.Wq").value;
  const Tensor& wk = store.get("comp.t3.Wk").value;
  for (int64_t i = 0; i < wq.size(); ++i) REQUIRE(wq[i] == wk[i]);
  CHECK_THROWS(composer_assign(store, "t3", d, h, rng));

  auto unit = [&](int axis) {
    Tensor e({d});
    e[axis] = 1.0;
    return e;
  };
  std::vector<PriorPolicy> priors;
  priors.push_back({1, BackboneBinding{}, unit(0)});

  SUBCASE("single prior takes all the weight regardless of the maps") {
    auto w = compose_weights(store, "t3", unit(1), priors, nullptr);
    REQUIRE(w.size() == 1);
    CHECK(w[0] == 1.0);
  }

  SUBCASE("identical keys split the weight uniformly") {
    priors.push_back({2, BackboneBinding{}, unit(0)});
    priors.push_back({3, BackboneBinding{}, unit(0)});
    auto w = compose_weights(store, "t3", unit(2), priors, nullptr);
    REQUIRE(w.size() == 3);
    double sum = 0.0;
    for (double x : w) {
      CHECK(std::fabs(x - 1.0 / 3.0) < 1e-12);
      CHECK(x >= 0.0);
      sum += x;
    }
    CHECK(std::fabs(sum - 1.0) < 1e-6);
  }

  SUBCASE("logit gap of ln 2 gives the 2:1 split") {
    // Craft maps so the logits are exactly [ln 2, 0]: Wq sends e0 to a unit
    // query along axis 0; Wk scales prior embeddings into keys whose dot
    // with q is ln2*sqrt(d) for the first prior and 0 for the second.
    Tensor& q = store.get("comp.t3.Wq").value;
    Tensor& k = store.get("comp.t3.Wk").value;
    q.zero();
    k.zero();
    q[0 * h + 0] = 1.0;  // e = axis0 -> q = [1, 0, 0, 0]
    const double lg = std::log(2.0) * std::sqrt(double(d));
    k[0 * h + 0] = lg;   // prior embedding axis0 -> key [lg, 0, 0, 0]
    // prior embedding axis1 -> key 0
    priors.push_back({2, BackboneBinding{}, unit(1)});
    auto w = compose_weights(store, "t3", unit(0), priors, nullptr);
    REQUIRE(w.size() == 2);
    CHECK(std::fabs(w[0] - 2.0 / 3.0) < 1e-12);
    CHECK(std::fabs(w[1] - 1.0 / 3.0) < 1e-12);
  }

  SUBCASE("no priors is an error") {
    std::vector<PriorPolicy> none;
    CHECK_THROWS(compose_weights(store, "t3", unit(0), none, nullptr));
  }
}

TEST_CASE("attention maps match finite differences through the weighting") {
  const int d = 8, h = 5, P = 3;
  ParamStore store;
  Rng rng(11);
  composer_assign(store, "t9", d, h, rng);
  // Separate the maps so the check exercises both gradients independently.
  for (auto& v : store.get("comp.t9.Wk").value.v) v += 0.1 * rng.normal();

  Tensor ek({d});
  for (auto& v : ek.v) v = rng.normal();
  std::vector<PriorPolicy> priors;
  std::vector<Tensor> phi;  // stand-in prior features, one vector each
  for (int p = 0; p < P; ++p) {
    Tensor e({d});
    for (auto& v : e.v) v = rng.normal();
    priors.push_back({p + 1, BackboneBinding{}, e});
    Tensor f({h});
    for (auto& v : f.v) v = rng.normal();
    phi.push_back(f);
  }
  Tensor target({h});
  for (auto& v : target.v) v = rng.normal();

  // loss = || sum_p w_p phi_p - target ||^2 exercises dW through softmax.
  auto loss_fn = [&](bool with_grad) {
    ComposeWeightsCache cache;
    auto w = compose_weights(store, "t9", ek, priors, &cache);
    Tensor f({h});
    for (int p = 0; p < P; ++p)
      for (int j = 0; j < h; ++j) f[j] += w[size_t(p)] * phi[size_t(p)][j];
    double loss = 0.0;
    Tensor df({h});
    for (int j = 0; j < h; ++j) {
      const double err = f[j] - target[j];
      loss += err * err;
      df[j] = 2.0 * err;
    }
    if (with_grad) {
      std::vector<double> dw(size_t(P), 0.0);
      for (int p = 0; p < P; ++p)
        for (int j = 0; j < h; ++j) dw[size_t(p)] += df[j] * phi[size_t(p)][j];
      compose_weights_backward(store, "t9", ek, priors, cache, dw);
    }
    return loss;
  };
  auto res = grad_check(store, composer_param_names("t9"), loss_fn);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("composed context equals the hand-weighted prior features") {
  const BackboneConfig cfg = small_cfg();
  ParamStore store;
  Rng init(19);
  backbone_init(store, cfg, "bb.", init);
  grow_add_adapters(store, cfg, "t1", 2, init);
  grow_add_adapters(store, cfg, "t2", 2, init);
  // Move the adapters off zero so the two priors differ from the base.
  for (const auto& n : grow_param_names(cfg, "t1"))
    for (auto& v : store.get(n).value.v) v += 0.05 * init.normal();
  for (const auto& n : grow_param_names(cfg, "t2"))
    for (auto& v : store.get(n).value.v) v += 0.05 * init.normal();

  ComposerConfig ccfg;
  ccfg.text_dim = 16;
  Composer comp(cfg, ccfg);
  comp.set_task("t3", embed_task_text("push block north", ccfg.text_dim));
  comp.add_prior({1, grow_binding(cfg, "t1"),
                  embed_task_text("push block west", ccfg.text_dim)});
  comp.add_prior({2, grow_binding(cfg, "t2"),
                  embed_task_text("reach the corner", ccfg.text_dim)});
  composer_assign(store, "t3", ccfg.text_dim, cfg.h, init);

  WindowBatch wb = fixed_batch(cfg, 33);
  const auto w = comp.attention(store);
  REQUIRE(w.size() == 2);
  Tensor phi1 = backbone_features(store, cfg, grow_binding(cfg, "t1"), wb,
                                  false, nullptr, nullptr);
  Tensor phi2 = backbone_features(store, cfg, grow_binding(cfg, "t2"), wb,
                                  false, nullptr, nullptr);
  Tensor ctx = comp.context(store, wb);
  REQUIRE(ctx.same_shape(phi1));
  for (int64_t i = 0; i < ctx.size(); ++i)
    CHECK(std::fabs(ctx[i] - (w[0] * phi1[i] + w[1] * phi2[i])) < 1e-13);

  SUBCASE("direct-add sums the priors unweighted") {
    ComposerConfig cc2 = ccfg;
    cc2.mode = ComposeMode::kDirectAdd;
    Composer comp2(cfg, cc2);
    comp2.set_task("t3", embed_task_text("push block north", cc2.text_dim));
    comp2.add_prior({1, grow_binding(cfg, "t1"), Tensor({cc2.text_dim})});
    comp2.add_prior({2, grow_binding(cfg, "t2"), Tensor({cc2.text_dim})});
    Tensor ctx2 = comp2.context(store, wb);
    for (int64_t i = 0; i < ctx2.size(); ++i)
      CHECK(std::fabs(ctx2[i] - (phi1[i] + phi2[i])) < 1e-13);
    auto w2 = comp2.attention(store);
    REQUIRE(w2.size() == 2);
    CHECK(w2[0] == 0.5);
    CHECK(w2[1] == 0.5);
  }

  SUBCASE("layer-share serves the base trunk features") {
    ComposerConfig cc3 = ccfg;
    cc3.mode = ComposeMode::kLayerShare;
    Composer comp3(cfg, cc3);
    comp3.set_task("t3", Tensor({cc3.text_dim}));
    comp3.add_prior({1, grow_binding(cfg, "t1"), Tensor({cc3.text_dim})});
    Tensor base = backbone_features(store, cfg, BackboneBinding{}, wb, false,
                                    nullptr, nullptr);
    Tensor ctx3 = comp3.context(store, wb);
    for (int64_t i = 0; i < ctx3.size(); ++i) CHECK(ctx3[i] == base[i]);
  }

  SUBCASE("inactive modes provide no context") {
    ComposerConfig cc4 = ccfg;
    cc4.mode = ComposeMode::kNone;
    Composer comp4(cfg, cc4);
    comp4.add_prior({1, grow_binding(cfg, "t1"), Tensor({cc4.text_dim})});
    CHECK_FALSE(comp4.active());
    CHECK(comp4.context(store, wb).size() == 0);
    Composer comp5(cfg, ccfg);  // attentive but no priors
    CHECK_FALSE(comp5.active());
  }
}

TEST_CASE("warmup decision: threshold edges and the no-prior escape") {
  const BackboneConfig cfg = small_cfg();
  SuiteSpec suite = load_suite("");
  const TaskSpec task = suite_task(suite, 2);
  EpisodeSet data = generate_dataset(task, 10, 4321);

  ParamStore store;
  Rng init(41);
  backbone_init(store, cfg, "bb.", init);
  head_init(store, "head.t2.", cfg.h, cfg.action_dim, init);
  grow_add_adapters(store, cfg, "t1", 2, init);

  ComposerConfig ccfg;
  ccfg.text_dim = 16;
  ccfg.warmup_iters = 25;

  SUBCASE("no priors: forced new sub-network, nothing trained") {
    Composer comp(cfg, ccfg);
    comp.set_task("t2", embed_task_text("reach northeast", ccfg.text_dim));
    const size_t params_before = store.names().size();
    WarmupOutcome out = warmup_and_decide(store, cfg, comp, "t2", "head.t2.",
                                          data, task, 8, 1e-3, init, 900, 901,
                                          4, -3.0);
    CHECK_FALSE(out.ran);
    CHECK_FALSE(out.reuse);
    CHECK(out.losses.empty());
    CHECK(store.names().size() == params_before);  // no Wq/Wk assigned
  }

  SUBCASE("threshold edges decide reuse against the same evaluation") {
    auto run_with_eta = [&](double eta, const std::string& tag) {
      ComposerConfig cc = ccfg;
      cc.eta = eta;
      Composer comp(cfg, cc);
      comp.set_task(tag, embed_task_text("reach northeast", cc.text_dim));
      comp.add_prior({1, grow_binding(cfg, "t1"),
                      embed_task_text("push block west", cc.text_dim)});
      return warmup_and_decide(store, cfg, comp, tag, "head." + tag + ".",
                               data, task, 8, 1e-3, init, 900, 901, 4, -3.0);
    };
    head_init(store, "head.ta.", cfg.h, cfg.action_dim, init);
    WarmupOutcome always = run_with_eta(0.0, "ta");
    CHECK(always.ran);
    CHECK(always.reuse);  // any success rate clears a zero threshold
    CHECK(int(always.losses.size()) == ccfg.warmup_iters);
    REQUIRE(always.attention.size() == 1);
    CHECK(always.attention[0] == 1.0);

    head_init(store, "head.tb.", cfg.h, cfg.action_dim, init);
    WarmupOutcome never = run_with_eta(1.1, "tb");
    CHECK(never.ran);
    CHECK_FALSE(never.reuse);  // success cannot exceed 1

    // Warmup touches only the context maps and the head: the trunk, the
    // prior's adapters, and other heads hold bit for bit.
    CHECK(store.has("comp.ta.Wq"));
    CHECK(store.has("comp.tb.Wk"));
  }

  SUBCASE("warmup trains only the declared parameters") {
    Composer comp(cfg, ccfg);
    comp.set_task("tw", embed_task_text("reach northeast", ccfg.text_dim));
    comp.add_prior({1, grow_binding(cfg, "t1"),
                    embed_task_text("push block west", ccfg.text_dim)});
    head_init(store, "head.tw.", cfg.h, cfg.action_dim, init);

    auto trunk_before = store.snapshot(backbone_param_names(cfg, "bb."));
    auto prior_before = store.snapshot(grow_param_names(cfg, "t1"));
    auto head_before = store.snapshot(head_param_names("head.tw."));
    WarmupOutcome out = warmup_and_decide(store, cfg, comp, "tw", "head.tw.",
                                          data, task, 8, 1e-3, init, 902, 903,
                                          4, -3.0);
    CHECK(out.ran);
    for (const auto& [name, t] : trunk_before) {
      const Tensor& now = store.get(name).value;
      for (int64_t i = 0; i < t.size(); ++i) REQUIRE(now[i] == t[i]);
    }
    for (const auto& [name, t] : prior_before) {
      const Tensor& now = store.get(name).value;
      for (int64_t i = 0; i < t.size(); ++i) REQUIRE(now[i] == t[i]);
    }
    bool head_moved = false;
    for (const auto& [name, t] : head_before) {
      const Tensor& now = store.get(name).value;
      for (int64_t i = 0; i < t.size(); ++i)
        if (now[i] != t[i]) head_moved = true;
    }
    CHECK(head_moved);
    // With one prior the attention is pinned at 1, so the useful signal is
    // that the losses stay finite and the evaluation ran all episodes.
    for (double l : out.losses) CHECK(std::isfinite(l));
    CHECK_FALSE(out.eval.nan_abort);
  }
}
