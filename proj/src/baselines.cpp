#include "corl/baselines.hpp"

#include <cmath>

#include "corl/common.hpp"
#include "corl/ops.hpp"

namespace corl {

// ------------------------- parameter regularizers -------------------------

ImportanceTable make_uniform_table(const ParamStore& store,
                                   const std::vector<std::string>& names) {
  ImportanceTable table;
  for (const std::string& n : names) {
    const Tensor& v = store.get(n).value;
    Tensor ones(v.shape);
    ones.fill(1.0);
    table.importance[n] = std::move(ones);
    table.snapshot[n] = v;
  }
  return table;
}

void refresh_snapshot(ImportanceTable& table, const ParamStore& store) {
  for (auto& [name, imp] : table.importance)
    table.snapshot[name] = store.get(name).value;
}

double reg_penalty(ParamStore& store, const ImportanceTable& table,
                   double lambda, bool accumulate_grads) {
  CORL_CHECK(!table.importance.empty(), "importance table is empty");
  double total = 0.0;
  for (const auto& [name, imp] : table.importance) {
    const auto anchor_it = table.snapshot.find(name);
    CORL_CHECK(anchor_it != table.snapshot.end(),
               "importance entry without an anchor: " + name);
    Param& p = store.get(name);
    const Tensor& anchor = anchor_it->second;
    CORL_CHECK(p.value.same_shape(anchor) && p.value.same_shape(imp),
               "importance table shape mismatch: " + name);
    for (int64_t i = 0; i < p.value.size(); ++i) {
      const double d = p.value[i] - anchor[i];
      total += imp[i] * d * d;
      if (accumulate_grads) p.grad[i] += 2.0 * lambda * imp[i] * d;
    }
  }
  return lambda * total;
}

void accumulate_importance(RegMethod method, ParamStore& store,
                           const std::vector<std::string>& names,
                           const std::function<void(int)>& sample_grad, int n,
                           ImportanceTable& table) {
  CORL_CHECK(n > 0, "importance estimation needs at least one sample");
  CORL_CHECK(method == RegMethod::kEwc || method == RegMethod::kMas,
             "only EWC and MAS estimate importances");
  std::map<std::string, Tensor> acc;
  for (const std::string& name : names)
    acc[name] = Tensor(store.get(name).value.shape);
  for (int i = 0; i < n; ++i) {
    store.zero_grads();
    sample_grad(i);
    for (const std::string& name : names) {
      const Tensor& g = store.get(name).grad;
      Tensor& a = acc[name];
      for (int64_t j = 0; j < g.size(); ++j)
        a[j] += (method == RegMethod::kEwc) ? g[j] * g[j] : std::fabs(g[j]);
    }
  }
  store.zero_grads();
  for (const std::string& name : names) {
    Tensor& a = acc[name];
    for (auto& v : a.v) v /= double(n);
    auto it = table.importance.find(name);
    if (it == table.importance.end())
      table.importance[name] = std::move(a);
    else
      for (int64_t j = 0; j < it->second.size(); ++j) it->second[j] += a[j];
  }
}

void importance_update_dt(RegMethod method, ParamStore& store,
                          const BackboneConfig& cfg,
                          const BackboneBinding& bind,
                          const std::string& head_prefix,
                          const EpisodeSet& data, int n, Rng& rng,
                          const std::vector<std::string>& names,
                          ImportanceTable& table) {
  auto sample_grad = [&](int) {
    WindowBatch wb = sample_windows(data, 1, cfg.window, rng);
    BackboneCache cache;
    Tensor feat = backbone_features(store, cfg, bind, wb, false, nullptr, &cache);
    HeadCache hc;
    Tensor empty;
    Tensor pred = head_forward(store, head_prefix, pack_head_input(feat, empty), &hc);
    // d(criterion)/d(pred) over real positions: prediction error for the
    // likelihood curvature, twice the output for the sensitivity norm.
    Tensor dpred(pred.shape);
    for (int m = 0; m < wb.M; ++m) {
      if (!wb.loss_mask[size_t(m)]) continue;
      for (int a = 0; a < cfg.action_dim; ++a) {
        const int64_t at = int64_t(m) * cfg.action_dim + a;
        dpred[at] = (method == RegMethod::kEwc)
                        ? pred[at] - wb.actions[at]
                        : 2.0 * pred[at];
      }
    }
    Tensor dx2h = head_backward(store, head_prefix, hc, dpred);
    Tensor dfeat;
    unpack_head_grad(dx2h, wb.B, wb.M, cfg.h, &dfeat, nullptr);
    backbone_backward(store, cfg, bind, wb, cache, dfeat);
  };
  accumulate_importance(method, store, names, sample_grad, n, table);
  refresh_snapshot(table, store);
}

// ------------------------- knowledge distillation -------------------------

std::function<double(const WindowBatch&, const Tensor&, Tensor&)>
make_lwf_hook(LwfState& lwf, ParamStore& store, const BackboneConfig& cfg,
              const BackboneBinding& bind) {
  CORL_CHECK(!lwf.prior_heads.empty(), "distillation needs prior heads");
  return [&lwf, &store, &cfg, &bind](const WindowBatch& wb, const Tensor& feat,
                                     Tensor& dfeat) {
    Tensor old_feat = backbone_features(lwf.old_params, cfg, bind, wb, false,
                                        nullptr, nullptr);
    const double scale = lwf.lambda / double(lwf.prior_heads.size());
    double total = 0.0;
    Tensor empty;
    const Tensor x2h = pack_head_input(feat, empty);
    const Tensor old_x2h = pack_head_input(old_feat, empty);
    for (const std::string& head : lwf.prior_heads) {
      Tensor target = head_forward(lwf.old_params, head, old_x2h, nullptr);
      HeadCache hc;
      Tensor pred = head_forward(store, head, x2h, &hc);
      pred.shape = {wb.B, wb.M, cfg.action_dim};
      target.shape = pred.shape;
      Tensor dpred;
      total += scale * masked_mse(pred, target, wb.loss_mask, &dpred);
      dpred.shape = {wb.B * wb.M, cfg.action_dim};
      for (auto& v : dpred.v) v *= scale;
      // The prior heads are frozen; only the trunk-feature half matters.
      Tensor dx2h = head_backward(store, head, hc, dpred);
      Tensor dfeat_part;
      unpack_head_grad(dx2h, wb.B, wb.M, cfg.h, &dfeat_part, nullptr);
      for (int64_t i = 0; i < dfeat.size(); ++i) dfeat[i] += dfeat_part[i];
    }
    return total;
  };
}

// ------------------------- gradient projection -------------------------

std::vector<double> gather_grads(const ParamStore& store,
                                 const std::vector<std::string>& names) {
  std::vector<double> g;
  for (const std::string& n : names) {
    const Tensor& t = store.get(n).grad;
    g.insert(g.end(), t.v.begin(), t.v.end());
  }
  return g;
}

void scatter_grads(ParamStore& store, const std::vector<std::string>& names,
                   const std::vector<double>& g) {
  size_t at = 0;
  for (const std::string& n : names) {
    Tensor& t = store.get(n).grad;
    CORL_CHECK(at + size_t(t.size()) <= g.size(), "gradient vector too short");
    std::copy(g.begin() + int64_t(at), g.begin() + int64_t(at) + t.size(),
              t.v.begin());
    at += size_t(t.size());
  }
  CORL_CHECK(at == g.size(), "gradient vector length mismatch");
}

std::vector<double> agem_project(const std::vector<double>& g_new,
                                 const std::vector<double>& g_old) {
  CORL_CHECK(g_new.size() == g_old.size(), "gradient length mismatch");
  double dot = 0.0, norm2 = 0.0;
  for (size_t i = 0; i < g_new.size(); ++i) {
    dot += g_new[i] * g_old[i];
    norm2 += g_old[i] * g_old[i];
  }
  if (dot > 0.0 || norm2 == 0.0) return g_new;
  std::vector<double> g = g_new;
  const double c = dot / norm2;
  for (size_t i = 0; i < g.size(); ++i) g[i] -= c * g_old[i];
  return g;
}

std::vector<double> agem_reference_grads(ParamStore& store,
                                         const BackboneConfig& cfg,
                                         const BackboneBinding& bind,
                                         const AgemMemory& memory,
                                         const std::vector<std::string>& names,
                                         int batch, Rng& rng) {
  CORL_CHECK(!memory.datasets.empty(), "reference memory is empty");
  CORL_CHECK(memory.datasets.size() == memory.heads.size(),
             "memory datasets and heads misaligned");
  const int pick = memory.datasets.size() == 1
                       ? 0
                       : rng.uniform_int(int(memory.datasets.size()));
  store.zero_grads();
  WindowBatch wb = sample_windows(*memory.datasets[size_t(pick)], batch,
                                  cfg.window, rng);
  BackboneCache cache;
  Tensor feat = backbone_features(store, cfg, bind, wb, false, nullptr, &cache);
  HeadCache hc;
  Tensor empty;
  Tensor pred = head_forward(store, memory.heads[size_t(pick)],
                             pack_head_input(feat, empty), &hc);
  pred.shape = {wb.B, wb.M, cfg.action_dim};
  Tensor dpred;
  masked_mse(pred, wb.actions, wb.loss_mask, &dpred);
  dpred.shape = {wb.B * wb.M, cfg.action_dim};
  Tensor dx2h = head_backward(store, memory.heads[size_t(pick)], hc, dpred);
  Tensor dfeat;
  unpack_head_grad(dx2h, wb.B, wb.M, cfg.h, &dfeat, nullptr);
  backbone_backward(store, cfg, bind, wb, cache, dfeat);
  std::vector<double> g = gather_grads(store, names);
  store.zero_grads();
  return g;
}

std::function<void()> make_agem_hook(ParamStore& store,
                                     const BackboneConfig& cfg,
                                     const BackboneBinding& bind,
                                     const AgemMemory& memory,
                                     std::vector<std::string> trunk_names,
                                     int ref_batch, Rng& rng) {
  return [&store, &cfg, &bind, &memory, trunk_names = std::move(trunk_names),
          ref_batch, &rng]() {
    // Preserve every gradient, not just the trunk's: the reference pass
    // below scribbles over all of them.
    const std::vector<std::string> all_names = store.names();
    const std::vector<double> g_all = gather_grads(store, all_names);
    const std::vector<double> g_cur = gather_grads(store, trunk_names);
    const std::vector<double> g_ref = agem_reference_grads(
        store, cfg, bind, memory, trunk_names, ref_batch, rng);
    scatter_grads(store, all_names, g_all);
    scatter_grads(store, trunk_names, agem_project(g_cur, g_ref));
  };
}

// ------------------------- mixed-task batches -------------------------

std::vector<int> rehearsal_assignment(int batch, double mix, int n_items,
                                      Rng& rng) {
  CORL_CHECK(batch > 0 && n_items > 0, "bad rehearsal request");
  CORL_CHECK(mix >= 0.0 && mix <= 1.0, "mix ratio out of range");
  std::vector<int> slot(size_t(batch), 0);
  if (n_items == 1) return slot;
  const int current = int(llround(mix * batch));
  for (int b = current; b < batch; ++b) slot[size_t(b)] = 1 + rng.uniform_int(n_items - 1);
  return slot;
}

std::vector<int> uniform_assignment(int batch, int n_items, Rng& rng) {
  CORL_CHECK(batch > 0 && n_items > 0, "bad assignment request");
  std::vector<int> slot(size_t(batch), 0);
  if (n_items == 1) return slot;
  for (int b = 0; b < batch; ++b) slot[size_t(b)] = rng.uniform_int(n_items);
  return slot;
}

double mixed_train_step(ParamStore& store, const BackboneConfig& cfg,
                        const BackboneBinding& bind,
                        const std::vector<MixedItem>& items,
                        const std::vector<int>& slot_item, Adam& opt,
                        Rng& sample_rng, Rng& drop_rng) {
  CORL_CHECK(!items.empty(), "mixed step needs at least one source");
  const int B = int(slot_item.size());
  CORL_CHECK(B > 0, "mixed step needs a non-empty batch");
  const int M = cfg.window;
  WindowBatch wb = make_window_batch(B, M, cfg.state_dim, cfg.action_dim);
  for (int b = 0; b < B; ++b) {
    const int it = slot_item[size_t(b)];
    CORL_CHECK(it >= 0 && it < int(items.size()), "slot item out of range");
    const EpisodeSet& data = *items[size_t(it)].data;
    const int e = sample_rng.uniform_int(int(data.episodes.size()));
    const int end = sample_rng.uniform_int(data.episodes[size_t(e)].T);
    fill_window(data, e, end, M, wb, b);
  }

  store.zero_grads();
  BackboneCache cache;
  Tensor feat = backbone_features(store, cfg, bind, wb, true, &drop_rng, &cache);
  Tensor empty;
  Tensor x2h = pack_head_input(feat, empty);

  // Route each window through its own task head.
  const int64_t row = int64_t(M) * 2 * cfg.h;
  const int64_t arow = int64_t(M) * cfg.action_dim;
  Tensor pred({B * M, cfg.action_dim});
  std::vector<HeadCache> caches(items.size());
  std::vector<std::vector<int>> groups(items.size());
  for (int b = 0; b < B; ++b) groups[size_t(slot_item[size_t(b)])].push_back(b);
  for (size_t g = 0; g < items.size(); ++g) {
    if (groups[g].empty()) continue;
    const int n = int(groups[g].size());
    Tensor sub({n * M, 2 * cfg.h});
    for (int i = 0; i < n; ++i)
      std::copy_n(x2h.v.data() + groups[g][size_t(i)] * row, row,
                  sub.v.data() + i * row);
    Tensor sub_pred =
        head_forward(store, items[g].head_prefix, sub, &caches[g]);
    for (int i = 0; i < n; ++i)
      std::copy_n(sub_pred.v.data() + i * arow, arow,
                  pred.v.data() + groups[g][size_t(i)] * arow);
  }

  pred.shape = {B, M, cfg.action_dim};
  Tensor dpred;
  const double loss = masked_mse(pred, wb.actions, wb.loss_mask, &dpred);
  CORL_CHECK(std::isfinite(loss), "training loss diverged");
  dpred.shape = {B * M, cfg.action_dim};

  Tensor dx2h({B * M, 2 * cfg.h});
  for (size_t g = 0; g < items.size(); ++g) {
    if (groups[g].empty()) continue;
    const int n = int(groups[g].size());
    Tensor sub_dpred({n * M, cfg.action_dim});
    for (int i = 0; i < n; ++i)
      std::copy_n(dpred.v.data() + groups[g][size_t(i)] * arow, arow,
                  sub_dpred.v.data() + i * arow);
    Tensor sub_dx2h =
        head_backward(store, items[g].head_prefix, caches[g], sub_dpred);
    for (int i = 0; i < n; ++i)
      std::copy_n(sub_dx2h.v.data() + i * row, row,
                  dx2h.v.data() + groups[g][size_t(i)] * row);
  }

  Tensor dfeat;
  unpack_head_grad(dx2h, B, M, cfg.h, &dfeat, nullptr);
  backbone_backward(store, cfg, bind, wb, cache, dfeat);
  opt.step(store);
  return loss;
}

}  // namespace corl
