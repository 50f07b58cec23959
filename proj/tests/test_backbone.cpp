#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <string>
#include <vector>

#include "corl/backbone.hpp"
#include "corl/common.hpp"
#include "corl/grad_check.hpp"
#include "corl/ops.hpp"
#include "corl/param_store.hpp"
#include "corl/rng.hpp"

using namespace corl;

namespace {

BackboneConfig small_cfg() {
  BackboneConfig cfg;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.h = 8;
  cfg.state_dim = 3;
  cfg.action_dim = 2;
  cfg.window = 4;
  cfg.max_timestep = 9;
  cfg.dropout = 0.0;
  cfg.rtg_scale = 10.0;
  return cfg;
}

// Batch with row 0 fully real and row 1 left-padded by `pad` slots.
WindowBatch random_batch(const BackboneConfig& cfg, int pad, Rng& rng) {
  WindowBatch wb = make_window_batch(2, cfg.window, cfg.state_dim,
                                     cfg.action_dim);
  for (int b = 0; b < 2; ++b)
    for (int m = 0; m < cfg.window; ++m) {
      const size_t p = size_t(b) * cfg.window + size_t(m);
      if (b == 1 && m < pad) continue;  // leave padded slots zeroed
      wb.loss_mask[p] = 1;
      wb.timesteps[p] = (b == 1 ? m - pad : m) + 1;
      wb.rtg.at2(b, m) = rng.uniform(-20, 0);
      for (int i = 0; i < cfg.state_dim; ++i)
        wb.states.at3(b, m, i) = rng.uniform(-1, 1);
      for (int i = 0; i < cfg.action_dim; ++i)
        wb.actions.at3(b, m, i) = rng.uniform(-1, 1);
    }
  return wb;
}

bool tensors_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (int64_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("padded slots cannot influence real positions") {
  BackboneConfig cfg = small_cfg();
  ParamStore store;
  Rng rng(12);
  backbone_init(store, cfg, "bb.", rng);
  BackboneBinding bind;

  Rng brng(77);
  WindowBatch wb = random_batch(cfg, 2, brng);
  Tensor base = backbone_features(store, cfg, bind, wb, false, nullptr, nullptr);
  CHECK(base.dim(0) == 2);
  CHECK(base.dim(1) == cfg.window);
  CHECK(base.dim(2) == cfg.h);

  // Poison the padded slots of row 1 with huge values.
  WindowBatch poisoned = wb;
  for (int m = 0; m < 2; ++m) {
    poisoned.rtg.at2(1, m) = 999.0;
    for (int i = 0; i < cfg.state_dim; ++i)
      poisoned.states.at3(1, m, i) = -777.0;
    for (int i = 0; i < cfg.action_dim; ++i)
      poisoned.actions.at3(1, m, i) = 555.0;
  }
  Tensor after =
      backbone_features(store, cfg, bind, poisoned, false, nullptr, nullptr);
  for (int m = 0; m < cfg.window; ++m)
    for (int d = 0; d < cfg.h; ++d) {
      // Row 0 has no padding: every position must be bit-identical.
      CHECK(after.at3(0, m, d) == base.at3(0, m, d));
      // Row 1: real positions (m >= 2) must be untouched by the poison.
      if (m >= 2) CHECK(after.at3(1, m, d) == base.at3(1, m, d));
    }
}

TEST_CASE("causal structure across steps and modalities") {
  BackboneConfig cfg = small_cfg();
  ParamStore store;
  Rng rng(21);
  backbone_init(store, cfg, "bb.", rng);
  BackboneBinding bind;

  Rng brng(31);
  WindowBatch wb = random_batch(cfg, 0, brng);
  Tensor base = backbone_features(store, cfg, bind, wb, false, nullptr, nullptr);
  const int j = 2;  // perturb step 2 of 4

  SUBCASE("a step's own action is invisible to its feature") {
    WindowBatch mod = wb;
    mod.actions.at3(0, j, 0) += 0.5;
    Tensor out = backbone_features(store, cfg, bind, mod, false, nullptr,
                                   nullptr);
    for (int m = 0; m <= j; ++m)
      for (int d = 0; d < cfg.h; ++d)
        CHECK(out.at3(0, m, d) == base.at3(0, m, d));
    bool later_changed = false;
    for (int d = 0; d < cfg.h; ++d)
      if (out.at3(0, j + 1, d) != base.at3(0, j + 1, d)) later_changed = true;
    CHECK(later_changed);
  }

  SUBCASE("a step's state feeds its own feature but not earlier ones") {
    WindowBatch mod = wb;
    mod.states.at3(0, j, 1) += 0.25;
    Tensor out = backbone_features(store, cfg, bind, mod, false, nullptr,
                                   nullptr);
    for (int m = 0; m < j; ++m)
      for (int d = 0; d < cfg.h; ++d)
        CHECK(out.at3(0, m, d) == base.at3(0, m, d));
    bool self_changed = false;
    for (int d = 0; d < cfg.h; ++d)
      if (out.at3(0, j, d) != base.at3(0, j, d)) self_changed = true;
    CHECK(self_changed);
  }

  SUBCASE("return-to-go conditions the same step's feature") {
    WindowBatch mod = wb;
    mod.rtg.at2(0, j) += 3.0;
    Tensor out = backbone_features(store, cfg, bind, mod, false, nullptr,
                                   nullptr);
    for (int m = 0; m < j; ++m)
      for (int d = 0; d < cfg.h; ++d)
        CHECK(out.at3(0, m, d) == base.at3(0, m, d));
    bool self_changed = false;
    for (int d = 0; d < cfg.h; ++d)
      if (out.at3(0, j, d) != base.at3(0, j, d)) self_changed = true;
    CHECK(self_changed);
  }

  SUBCASE("the second batch row is independent of the first") {
    WindowBatch mod = wb;
    mod.states.at3(0, 0, 0) += 1.0;
    Tensor out = backbone_features(store, cfg, bind, mod, false, nullptr,
                                   nullptr);
    for (int m = 0; m < cfg.window; ++m)
      for (int d = 0; d < cfg.h; ++d)
        CHECK(out.at3(1, m, d) == base.at3(1, m, d));
  }
}

TEST_CASE("trunk gradients match finite differences, with and without patches") {
  BackboneConfig cfg = small_cfg();
  ParamStore store;
  Rng rng(99);
  backbone_init(store, cfg, "bb.", rng);
  // Random linear head so the scalar loss exercises every feature.
  store.add_uniform("head.W", {cfg.action_dim, cfg.h}, cfg.h, rng);
  store.add("head.b", {cfg.action_dim});

  Rng brng(7);
  WindowBatch wb = random_batch(cfg, 1, brng);
  Tensor targets({2, cfg.window, cfg.action_dim});
  for (int64_t i = 0; i < targets.size(); ++i) targets[i] = brng.uniform(-1, 1);

  auto run = [&](const BackboneBinding& bind, bool with_grad) {
    BackboneCache cache;
    Tensor feat = backbone_features(store, cfg, bind, wb, with_grad, nullptr,
                                    with_grad ? &cache : nullptr);
    LinearSite head{&store.get("head.W"), &store.get("head.b"), nullptr,
                    nullptr, nullptr};
    LinearCache hc;
    Tensor flat = feat;
    flat.shape = {2 * cfg.window, cfg.h};
    Tensor pred = linear_forward(head, flat, with_grad ? &hc : nullptr);
    pred.shape = {2, cfg.window, cfg.action_dim};
    Tensor dpred;
    Tensor tgt = targets;
    const double loss = masked_mse(pred, tgt, wb.loss_mask, &dpred);
    if (with_grad) {
      dpred.shape = {2 * cfg.window, cfg.action_dim};
      Tensor dflat = linear_backward(head, hc, dpred);
      dflat.shape = {2, cfg.window, cfg.h};
      backbone_backward(store, cfg, bind, wb, cache, dflat);
    }
    return loss;
  };

  SUBCASE("plain trunk") {
    BackboneBinding bind;
    auto names = backbone_param_names(cfg, "bb.");
    names.push_back("head.W");
    names.push_back("head.b");
    auto res = grad_check(
        store, names, [&](bool g) { return run(bind, g); }, 1e-5);
    INFO("worst ", res.worst_param, "[", res.worst_index, "] analytic ",
         res.worst_analytic, " numeric ", res.worst_numeric);
    CHECK(res.max_rel_err < 1e-4);
  }

  SUBCASE("adapters on the mlp sites and a mask on an attention site") {
    Rng arng(55);
    const int r = 2;
    BackboneBinding bind;
    for (int i = 0; i < cfg.layers; ++i)
      for (const char* s : {"mlp.W0", "mlp.W1"}) {
        const std::string site = "l" + std::to_string(i) + "." + s;
        store.add_uniform("ad." + site + ".A", {r, cfg.h}, cfg.h, arng);
        store.add_uniform("ad." + site + ".B", {cfg.h, r}, r, arng);
        bind.adapters[site] = {"ad." + site + ".A", "ad." + site + ".B"};
      }
    static std::vector<uint8_t> mask;
    mask.assign(size_t(cfg.h) * cfg.h, 0);
    for (size_t i = 0; i < mask.size(); ++i) mask[i] = arng.uniform() < 0.5;
    bind.masks["l1.attn.Wq"] = &mask;

    std::vector<std::string> names = backbone_param_names(cfg, "bb.");
    for (const auto& [site, ab] : bind.adapters) {
      names.push_back(ab.first);
      names.push_back(ab.second);
    }
    auto res = grad_check(
        store, names, [&](bool g) { return run(bind, g); }, 1e-5);
    INFO("worst ", res.worst_param, "[", res.worst_index, "] analytic ",
         res.worst_analytic, " numeric ", res.worst_numeric);
    CHECK(res.max_rel_err < 1e-4);

    // Masked-out weight elements must carry exactly zero analytic gradient.
    store.zero_grads();
    (void)run(bind, true);
    const Param& wq = store.get("bb.l1.attn.Wq");
    int zeros = 0;
    for (int64_t i = 0; i < wq.grad.size(); ++i)
      if (!mask[size_t(i)]) {
        CHECK(wq.grad[i] == 0.0);
        ++zeros;
      }
    CHECK(zeros > 0);
  }
}

TEST_CASE("dropout is seed-deterministic in training mode") {
  BackboneConfig cfg = small_cfg();
  cfg.dropout = 0.1;
  ParamStore store;
  Rng rng(3);
  backbone_init(store, cfg, "bb.", rng);
  BackboneBinding bind;
  Rng brng(8);
  WindowBatch wb = random_batch(cfg, 0, brng);

  Rng d1(42), d2(42), d3(43);
  Tensor f1 = backbone_features(store, cfg, bind, wb, true, &d1, nullptr);
  Tensor f2 = backbone_features(store, cfg, bind, wb, true, &d2, nullptr);
  Tensor f3 = backbone_features(store, cfg, bind, wb, true, &d3, nullptr);
  CHECK(tensors_equal(f1, f2));
  CHECK(!tensors_equal(f1, f3));

  // Inference ignores dropout entirely.
  Tensor e1 = backbone_features(store, cfg, bind, wb, false, nullptr, nullptr);
  Tensor e2 = backbone_features(store, cfg, bind, wb, false, nullptr, nullptr);
  CHECK(tensors_equal(e1, e2));
  CHECK(!tensors_equal(e1, f1));
}

TEST_CASE("identity patches change nothing") {
  BackboneConfig cfg = small_cfg();
  ParamStore store;
  Rng rng(14);
  backbone_init(store, cfg, "bb.", rng);
  Rng brng(15);
  WindowBatch wb = random_batch(cfg, 1, brng);
  BackboneBinding plain;
  Tensor base = backbone_features(store, cfg, plain, wb, false, nullptr,
                                  nullptr);

  SUBCASE("zero-initialized adapter second factor is a no-op") {
    const int r = 3;
    BackboneBinding bind;
    Rng arng(9);
    store.add_uniform("ad.l0.mlp.W0.A", {r, cfg.h}, cfg.h, arng);
    store.add("ad.l0.mlp.W0.B", {cfg.h, r});  // zeros
    bind.adapters["l0.mlp.W0"] = {"ad.l0.mlp.W0.A", "ad.l0.mlp.W0.B"};
    Tensor out = backbone_features(store, cfg, bind, wb, false, nullptr,
                                   nullptr);
    CHECK(tensors_equal(out, base));
  }

  SUBCASE("an all-ones mask is a no-op; zeroing a row is not") {
    static std::vector<uint8_t> ones, partial;
    ones.assign(size_t(cfg.h) * cfg.h, 1);
    BackboneBinding bind;
    bind.masks["l0.attn.Wv"] = &ones;
    Tensor out = backbone_features(store, cfg, bind, wb, false, nullptr,
                                   nullptr);
    CHECK(tensors_equal(out, base));

    partial = ones;
    for (int i = 0; i < cfg.h; ++i) partial[size_t(i)] = 0;  // first row off
    bind.masks["l0.attn.Wv"] = &partial;
    Tensor out2 = backbone_features(store, cfg, bind, wb, false, nullptr,
                                    nullptr);
    CHECK(!tensors_equal(out2, base));
  }
}

TEST_CASE("timestep bounds are enforced") {
  BackboneConfig cfg = small_cfg();
  ParamStore store;
  Rng rng(4);
  backbone_init(store, cfg, "bb.", rng);
  BackboneBinding bind;
  Rng brng(5);
  WindowBatch wb = random_batch(cfg, 0, brng);
  wb.timesteps[0] = cfg.max_timestep + 1;
  CHECK_THROWS_AS(
      (void)backbone_features(store, cfg, bind, wb, false, nullptr, nullptr),
      Error);
}

TEST_CASE("parameter and site listings cover the trunk exactly") {
  BackboneConfig cfg = small_cfg();
  ParamStore store;
  Rng rng(2);
  backbone_init(store, cfg, "bb.", rng);
  auto names = backbone_param_names(cfg, "bb.");
  auto stored = store.names();
  CHECK(names.size() == stored.size());
  for (const auto& n : names) CHECK(store.has(n));
  auto sites = backbone_site_names(cfg);
  CHECK(sites.size() == size_t(6 * cfg.layers));
  for (const auto& s : sites) CHECK(store.has("bb." + s));
  auto trunk = backbone_trunk_weight_names(cfg, "bb.");
  CHECK(trunk.size() == sites.size());
  // Biases and norms are not in the prunable set.
  for (const auto& t : trunk) CHECK(t.find(".b") == std::string::npos);
}
