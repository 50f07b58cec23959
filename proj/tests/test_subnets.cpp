#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "corl/adam.hpp"
#include "corl/backbone.hpp"
#include "corl/grow.hpp"
#include "corl/policy.hpp"
#include "corl/prune.hpp"
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
  WindowBatch wb = make_window_batch(3, cfg.window, cfg.state_dim, cfg.action_dim);
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

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.same_shape(b));
  double m = 0.0;
  for (int64_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("adapter growth: counts, no-op birth, duplicate rejection") {
  BackboneConfig cfg;  // reference scale: 2 layers, width 32
  cfg.layers = 2;
  cfg.h = 32;
  CHECK(grow_adapter_sites(cfg).size() == 4);
  CHECK(grow_param_count(cfg, 4) == 1024);
  CHECK(grow_param_count(cfg, 8) == 2048);

  const BackboneConfig small = small_cfg();
  ParamStore store;
  Rng init(17);
  backbone_init(store, small, "bb.", init);
  const size_t base_params = store.names().size();

  grow_add_adapters(store, small, "t2", 3, init);
  auto names = grow_param_names(small, "t2");
  CHECK(names.size() == 4);  // one layer: two MLP maps, A and B each
  int64_t added = 0;
  for (const auto& n : names) {
    REQUIRE(store.has(n));
    added += store.get(n).value.size();
  }
  CHECK(added == grow_param_count(small, 3));
  CHECK(store.names().size() == base_params + names.size());
  CHECK_THROWS(grow_add_adapters(store, small, "t2", 3, init));

  // Zero-B birth: the adapted trunk computes exactly the base function.
  WindowBatch wb = fixed_batch(small, 5);
  BackboneBinding plain;
  Tensor base = backbone_features(store, small, plain, wb, false, nullptr, nullptr);
  Tensor grown = backbone_features(store, small, grow_binding(small, "t2"), wb,
                                   false, nullptr, nullptr);
  CHECK(max_abs_diff(base, grown) == 0.0);
}

TEST_CASE("adapter training leaves the trunk and earlier tasks untouched") {
  const BackboneConfig cfg = small_cfg();
  SuiteSpec suite = load_suite("");
  EpisodeSet data = generate_dataset(suite_task(suite, 2), 8, 777);

  ParamStore store;
  Rng init(23);
  backbone_init(store, cfg, "bb.", init);
  head_init(store, "head.t1.", cfg.h, cfg.action_dim, init);
  grow_add_adapters(store, cfg, "t1", 2, init);

  auto train = [&](const std::string& tag, const std::string& head) {
    std::vector<std::string> names = grow_param_names(cfg, tag);
    for (const auto& n : head_param_names(head)) names.push_back(n);
    Adam opt(1e-3);
    opt.attach(store, names);
    Rng sample(31), drop(32);
    DtStepHooks hooks;
    for (int i = 0; i < 30; ++i)
      dt_train_step(store, cfg, grow_binding(cfg, tag), head, data, 8, opt,
                    sample, drop, hooks);
  };

  auto trunk_names = backbone_param_names(cfg, "bb.");
  auto trunk_before = store.snapshot(trunk_names);
  train("t1", "head.t1.");
  for (const auto& [name, t] : trunk_before) {
    const Tensor& now = store.get(name).value;
    for (int64_t i = 0; i < t.size(); ++i) REQUIRE(now[i] == t[i]);
  }

  // Adapters actually moved: the adapted function no longer equals the base.
  WindowBatch wb = fixed_batch(cfg, 6);
  BackboneBinding plain;
  Tensor base = backbone_features(store, cfg, plain, wb, false, nullptr, nullptr);
  Tensor t1 = backbone_features(store, cfg, grow_binding(cfg, "t1"), wb, false,
                                nullptr, nullptr);
  CHECK(max_abs_diff(base, t1) > 1e-9);

  // A later task's training cannot move task 1's function.
  head_init(store, "head.t2.", cfg.h, cfg.action_dim, init);
  grow_add_adapters(store, cfg, "t2", 2, init);
  auto t1_params = store.snapshot(grow_param_names(cfg, "t1"));
  train("t2", "head.t2.");
  for (const auto& [name, t] : t1_params) {
    const Tensor& now = store.get(name).value;
    for (int64_t i = 0; i < t.size(); ++i) REQUIRE(now[i] == t[i]);
  }
  Tensor t1_after = backbone_features(store, cfg, grow_binding(cfg, "t1"), wb,
                                      false, nullptr, nullptr);
  CHECK(max_abs_diff(t1, t1_after) == 0.0);
}

TEST_CASE("claim pass: magnitude order, tie-breaking, zeroed drops") {
  const BackboneConfig cfg = small_cfg();
  ParamStore store;
  Rng init(3);
  backbone_init(store, cfg, "bb.", init);
  PruneBook book = prune_book_init(cfg, "bb.", 0.3);
  CHECK(book.owner.size() == 6);  // one layer: four attention maps, two MLP

  // Plant known magnitudes in one tensor: element i has |value| = i + 1,
  // so the largest 19 of 64 are exactly indices 45..63.
  Tensor& w = store.get("bb.l0.attn.Wq").value;
  for (int64_t i = 0; i < w.size(); ++i)
    w[i] = (i % 2 ? 1.0 : -1.0) * double(i + 1);
  // All-equal magnitudes elsewhere: ties must claim the lowest flat indices.
  Tensor& v = store.get("bb.l0.mlp.W0").value;
  for (auto& x : v.v) x = -0.5;

  PruneClaim claim = prune_claim(book, store, 1);
  CHECK_FALSE(claim.exhausted_any);
  for (const auto& [name, kept] : claim.kept) CHECK(kept == 19);

  const auto& own_q = book.owner.at("bb.l0.attn.Wq");
  for (int64_t i = 0; i < 64; ++i) {
    CHECK(own_q[size_t(i)] == (i >= 45 ? 1 : 0));
    if (i < 45)
      CHECK(w[i] == 0.0);  // dropped weights zeroed in place
    else
      CHECK(std::fabs(w[i]) == double(i + 1));  // kept weights untouched
  }
  const auto& own_mlp = book.owner.at("bb.l0.mlp.W0");
  for (int64_t i = 0; i < 64; ++i)
    CHECK(own_mlp[size_t(i)] == (i < 19 ? 1 : 0));

  CHECK(prune_free_count(book, "bb.l0.attn.Wq") == 45);
  CHECK_THROWS(prune_claim(book, store, 3));  // claims must be sequential
  CHECK_THROWS(prune_free_count(book, "bb.nope"));
}

TEST_CASE("twenty claim rounds: exact capacity ledger and nested masks") {
  const BackboneConfig cfg = small_cfg();
  ParamStore store;
  Rng init(9);
  backbone_init(store, cfg, "bb.", init);
  PruneBook book = prune_book_init(cfg, "bb.", 0.3);

  // Independent capacity ledger for a 64-element tensor at keep 0.3 with
  // round-half-away counts: free 64 -> 45 -> 31 -> 22 -> 15 -> 10 -> 7 ->
  // 5 -> 3 -> 2 -> 1 -> 0, then exhausted.
  const int64_t expect_kept[20] = {19, 14, 9, 7, 5, 3, 2, 2, 1, 1,
                                   1,  0, 0, 0, 0, 0, 0, 0, 0, 0};

  Rng fill(42);
  std::vector<std::vector<int>> owners_at;  // snapshots of one tensor
  for (int k = 1; k <= 20; ++k) {
    // Simulated training: every free element moves, everything else held.
    for (auto& [name, own] : book.owner) {
      Tensor& val = store.get(name).value;
      for (size_t i = 0; i < own.size(); ++i)
        if (own[i] == 0) val[int64_t(i)] = fill.normal();
    }
    PruneClaim claim = prune_claim(book, store, k);
    for (const auto& [name, kept] : claim.kept)
      CHECK(kept == expect_kept[k - 1]);
    CHECK(claim.exhausted_any == (expect_kept[k - 1] == 0));
    owners_at.push_back(book.owner.at("bb.l0.attn.Wk"));
  }
  CHECK(book.exhausted.size() == 6 * 9);  // 6 tensors, rounds 12..20

  // Claim sets are disjoint and masks nest: once owned, owned forever.
  for (int k = 1; k < 20; ++k) {
    const auto& before = owners_at[size_t(k - 1)];
    const auto& after = owners_at[size_t(k)];
    for (size_t i = 0; i < before.size(); ++i)
      if (before[i] != 0) CHECK(after[i] == before[i]);
  }
  int64_t total_owned = 0;
  for (int o : book.owner.at("bb.l0.attn.Wk")) total_owned += (o != 0);
  int64_t expect_total = 0;
  for (int64_t kk : expect_kept) expect_total += kk;
  CHECK(total_owned == expect_total);
  CHECK(total_owned == 64);  // capacity fully packed

  // Visibility masks count exactly the cumulative claims.
  int64_t cum = 0;
  for (int k = 1; k <= 20; ++k) {
    cum += expect_kept[k - 1];
    auto mask = prune_visible_mask(book, "bb.l0.attn.Wk", k);
    int64_t vis = 0;
    for (uint8_t m : mask) vis += m;
    CHECK(vis == cum);
  }

  // The ledger survives serialization bit for bit.
  PruneBook copy = PruneBook::from_json(book.to_json());
  CHECK(copy.keep_fraction == book.keep_fraction);
  CHECK(copy.tasks_claimed == book.tasks_claimed);
  CHECK(copy.owner == book.owner);
  CHECK(copy.exhausted == book.exhausted);
  CHECK(copy.prefix == book.prefix);
}

TEST_CASE("packed training: earlier networks reproduce exactly") {
  const BackboneConfig cfg = small_cfg();
  SuiteSpec suite = load_suite("");
  EpisodeSet data = generate_dataset(suite_task(suite, 2), 8, 555);

  ParamStore store;
  Rng init(29);
  backbone_init(store, cfg, "bb.", init);
  head_init(store, "head.t1.", cfg.h, cfg.action_dim, init);
  head_init(store, "head.t2.", cfg.h, cfg.action_dim, init);
  PruneBook book = prune_book_init(cfg, "bb.", 0.3);

  const auto site_weights = backbone_trunk_weight_names(cfg, "bb.");
  auto run_steps = [&](const std::vector<std::string>& names,
                       const std::string& head, const BackboneBinding& bind,
                       int iters) {
    Adam opt(1e-3);
    opt.attach(store, names);
    Rng sample(7), drop(8);
    DtStepHooks hooks;
    for (int i = 0; i < iters; ++i)
      dt_train_step(store, cfg, bind, head, data, 8, opt, sample, drop, hooks);
  };
  auto all_trunk = backbone_param_names(cfg, "bb.");

  // Task 1 trains the whole trunk, then claims its share.
  prune_freeze_for_training(book, store);
  {
    std::vector<std::string> names = all_trunk;
    for (const auto& n : head_param_names("head.t1.")) names.push_back(n);
    run_steps(names, "head.t1.", BackboneBinding{}, 40);
  }
  prune_claim(book, store, 1);

  // Right after a claim the masked network equals the dense one: the
  // dropped elements are zero, so masking them away changes nothing.
  WindowBatch wb = fixed_batch(cfg, 11);
  MaskSet ms1;
  BackboneBinding vis1 = prune_binding(book, 1, ms1);
  {
    Tensor dense =
        backbone_features(store, cfg, BackboneBinding{}, wb, false, nullptr, nullptr);
    Tensor masked = backbone_features(store, cfg, vis1, wb, false, nullptr, nullptr);
    CHECK(max_abs_diff(dense, masked) == 0.0);
  }

  // Retraining moves only the kept elements; free stays parked at zero.
  prune_freeze_for_retrain(book, store, 1);
  auto pre_retrain = store.snapshot(site_weights);
  {
    std::vector<std::string> names = site_weights;
    for (const auto& n : head_param_names("head.t1.")) names.push_back(n);
    run_steps(names, "head.t1.", vis1, 20);
  }
  bool kept_moved = false;
  for (const std::string& name : site_weights) {
    const auto& own = book.owner.at(name);
    const Tensor& now = store.get(name).value;
    const Tensor& was = pre_retrain.at(name);
    for (size_t i = 0; i < own.size(); ++i) {
      if (own[i] == 1) {
        if (now[int64_t(i)] != was[int64_t(i)]) kept_moved = true;
      } else {
        REQUIRE(now[int64_t(i)] == 0.0);
      }
    }
  }
  CHECK(kept_moved);

  // Task 1's network, frozen now and forever.
  HeadCache no_cache;
  auto eval_t1 = [&] {
    Tensor feat = backbone_features(store, cfg, vis1, wb, false, nullptr, nullptr);
    Tensor empty;
    return head_forward(store, "head.t1.", pack_head_input(feat, empty), nullptr);
  };
  Tensor t1_frozen = eval_t1();

  // Task 2 trains the free elements; task 1's weights and function hold.
  prune_freeze_for_training(book, store);
  auto owned_snapshot = store.snapshot(site_weights);
  {
    std::vector<std::string> names = site_weights;
    for (const auto& n : head_param_names("head.t2.")) names.push_back(n);
    run_steps(names, "head.t2.", BackboneBinding{}, 30);
  }
  bool free_moved = false;
  for (const std::string& name : site_weights) {
    const auto& own = book.owner.at(name);
    const Tensor& now = store.get(name).value;
    const Tensor& was = owned_snapshot.at(name);
    for (size_t i = 0; i < own.size(); ++i) {
      if (own[i] != 0)
        REQUIRE(now[int64_t(i)] == was[int64_t(i)]);
      else if (now[int64_t(i)] != was[int64_t(i)])
        free_moved = true;
    }
  }
  CHECK(free_moved);
  CHECK(max_abs_diff(t1_frozen, eval_t1()) == 0.0);

  prune_claim(book, store, 2);
  MaskSet ms2;
  Tensor dense =
      backbone_features(store, cfg, BackboneBinding{}, wb, false, nullptr, nullptr);
  Tensor vis2 = backbone_features(store, cfg, prune_binding(book, 2, ms2), wb,
                                  false, nullptr, nullptr);
  CHECK(max_abs_diff(dense, vis2) == 0.0);
  CHECK(max_abs_diff(t1_frozen, eval_t1()) == 0.0);
}
