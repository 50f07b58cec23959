#include "corl/backbone.hpp"

#include <cmath>

#include "corl/common.hpp"

namespace corl {

namespace {

std::string layer_name(int i, const char* suffix) {
  return "l" + std::to_string(i) + "." + suffix;
}

Tensor reshaped(Tensor t, std::vector<int> s) {
  CORL_CHECK(Tensor::count(s) == t.size(), "reshape element count mismatch");
  t.shape = std::move(s);
  return t;
}

LinearSite resolve_site(ParamStore& store, const BackboneBinding& bind,
                        const std::string& site, const std::string& bias) {
  LinearSite s;
  s.W = &store.get(bind.prefix + site);
  s.b = &store.get(bind.prefix + bias);
  auto ad = bind.adapters.find(site);
  if (ad != bind.adapters.end()) {
    s.A = &store.get(ad->second.first);
    s.B = &store.get(ad->second.second);
  }
  auto mk = bind.masks.find(site);
  if (mk != bind.masks.end()) s.mask = mk->second;
  return s;
}

std::string bias_for(const std::string& site) {
  // "...Wq" -> "...bq", "...W0" -> "...b0"
  std::string b = site;
  const auto pos = b.rfind('W');
  CORL_CHECK(pos != std::string::npos, "site without weight name: " + site);
  b[pos] = 'b';
  return b;
}

}  // namespace

void backbone_init(ParamStore& store, const BackboneConfig& cfg,
                   const std::string& prefix, Rng& rng) {
  const int h = cfg.h;
  store.add_uniform(prefix + "emb.rtg.W", {h, 1}, 1, rng);
  store.add(prefix + "emb.rtg.b", {h});
  store.add_uniform(prefix + "emb.state.W", {h, cfg.state_dim}, cfg.state_dim,
                    rng);
  store.add(prefix + "emb.state.b", {h});
  store.add_uniform(prefix + "emb.action.W", {h, cfg.action_dim},
                    cfg.action_dim, rng);
  store.add(prefix + "emb.action.b", {h});
  store.add_uniform(prefix + "emb.time", {cfg.max_timestep + 1, h}, h, rng);
  for (int i = 0; i < cfg.layers; ++i) {
    store.add(prefix + layer_name(i, "ln1.g"), {h}).value.fill(1.0);
    store.add(prefix + layer_name(i, "ln1.b"), {h});
    for (const char* w : {"attn.Wq", "attn.Wk", "attn.Wv", "attn.Wo"}) {
      store.add_uniform(prefix + layer_name(i, w), {h, h}, h, rng);
      store.add(prefix + bias_for(layer_name(i, w)), {h});
    }
    store.add(prefix + layer_name(i, "ln2.g"), {h}).value.fill(1.0);
    store.add(prefix + layer_name(i, "ln2.b"), {h});
    store.add_uniform(prefix + layer_name(i, "mlp.W0"), {h, h}, h, rng);
    store.add(prefix + layer_name(i, "mlp.b0"), {h});
    store.add_uniform(prefix + layer_name(i, "mlp.W1"), {h, h}, h, rng);
    store.add(prefix + layer_name(i, "mlp.b1"), {h});
  }
  store.add(prefix + "lnf.g", {h}).value.fill(1.0);
  store.add(prefix + "lnf.b", {h});
}

std::vector<std::string> backbone_param_names(const BackboneConfig& cfg,
                                              const std::string& prefix) {
  std::vector<std::string> n;
  for (const char* e : {"emb.rtg.W", "emb.rtg.b", "emb.state.W", "emb.state.b",
                        "emb.action.W", "emb.action.b", "emb.time"})
    n.push_back(prefix + e);
  for (int i = 0; i < cfg.layers; ++i) {
    for (const char* s :
         {"ln1.g", "ln1.b", "attn.Wq", "attn.bq", "attn.Wk", "attn.bk",
          "attn.Wv", "attn.bv", "attn.Wo", "attn.bo", "ln2.g", "ln2.b",
          "mlp.W0", "mlp.b0", "mlp.W1", "mlp.b1"})
      n.push_back(prefix + layer_name(i, s));
  }
  n.push_back(prefix + "lnf.g");
  n.push_back(prefix + "lnf.b");
  return n;
}

std::vector<std::string> backbone_site_names(const BackboneConfig& cfg) {
  std::vector<std::string> n;
  for (int i = 0; i < cfg.layers; ++i)
    for (const char* s :
         {"attn.Wq", "attn.Wk", "attn.Wv", "attn.Wo", "mlp.W0", "mlp.W1"})
      n.push_back(layer_name(i, s));
  return n;
}

std::vector<std::string> backbone_trunk_weight_names(
    const BackboneConfig& cfg, const std::string& prefix) {
  std::vector<std::string> n;
  for (const std::string& s : backbone_site_names(cfg)) n.push_back(prefix + s);
  return n;
}

Tensor backbone_features(ParamStore& store, const BackboneConfig& cfg,
                         const BackboneBinding& bind, const WindowBatch& batch,
                         bool train, Rng* dropout_rng, BackboneCache* cache) {
  const int B = batch.B, M = batch.M, h = cfg.h;
  CORL_CHECK(M == cfg.window, "window length mismatch");
  CORL_CHECK(batch.state_dim == cfg.state_dim &&
                 batch.action_dim == cfg.action_dim,
             "batch dims do not match the trunk");
  const int T = 3 * M;
  const int64_t BM = int64_t(B) * M;
  const bool drop = train && cfg.dropout > 0.0;
  CORL_CHECK(!drop || dropout_rng != nullptr, "dropout needs an rng");
  if (cache) cache->layers.assign(size_t(cfg.layers), BackboneLayerCache{});

  // Modality embeddings over flattened steps.
  Tensor rtg_in({int(BM), 1});
  for (int64_t i = 0; i < BM; ++i) rtg_in[i] = batch.rtg[i] / cfg.rtg_scale;
  Tensor state_in = reshaped(batch.states, {int(BM), cfg.state_dim});
  Tensor action_in = reshaped(batch.actions, {int(BM), cfg.action_dim});

  BackboneBinding plain;  // embeddings are never adapted or masked
  plain.prefix = bind.prefix;
  Tensor er = linear_forward(resolve_site(store, plain, "emb.rtg.W", "emb.rtg.b"),
                             rtg_in, cache ? &cache->emb_rtg : nullptr);
  Tensor es = linear_forward(
      resolve_site(store, plain, "emb.state.W", "emb.state.b"), state_in,
      cache ? &cache->emb_state : nullptr);
  Tensor ea = linear_forward(
      resolve_site(store, plain, "emb.action.W", "emb.action.b"), action_in,
      cache ? &cache->emb_action : nullptr);

  // Interleave into the token stream and add the per-step time embedding.
  const Tensor& time = store.get(bind.prefix + "emb.time").value;
  Tensor tok({B * T, h});
  for (int b = 0; b < B; ++b) {
    for (int m = 0; m < M; ++m) {
      const int64_t step = int64_t(b) * M + m;
      const int ts = batch.timesteps[size_t(step)];
      CORL_CHECK(ts >= 0 && ts <= cfg.max_timestep, "timestep out of range");
      const double* trow = time.data() + int64_t(ts) * h;
      const double* src[3] = {er.data() + step * h, es.data() + step * h,
                              ea.data() + step * h};
      for (int j = 0; j < 3; ++j) {
        double* dst = tok.data() + (int64_t(b) * T + 3 * m + j) * h;
        for (int d = 0; d < h; ++d) dst[d] = src[j][d] + trow[d];
      }
    }
  }
  if (drop)
    tok = dropout_forward(tok, cfg.dropout, *dropout_rng,
                          cache ? &cache->drop_tok : nullptr);

  // Padded steps are invalid attention keys.
  std::vector<uint8_t> key_valid(size_t(B) * T);
  for (int64_t step = 0; step < BM; ++step)
    for (int j = 0; j < 3; ++j)
      key_valid[size_t((step / M) * T + 3 * (step % M) + j)] =
          batch.loss_mask[size_t(step)];

  Tensor x = std::move(tok);  // [B*T, h]
  for (int i = 0; i < cfg.layers; ++i) {
    BackboneLayerCache* lc = cache ? &cache->layers[size_t(i)] : nullptr;
    Tensor xh = layernorm_forward(store.get(bind.prefix + layer_name(i, "ln1.g")),
                                  store.get(bind.prefix + layer_name(i, "ln1.b")),
                                  x, lc ? &lc->ln1 : nullptr);
    Tensor q = linear_forward(resolve_site(store, bind, layer_name(i, "attn.Wq"),
                                           layer_name(i, "attn.bq")),
                              xh, lc ? &lc->wq : nullptr);
    Tensor k = linear_forward(resolve_site(store, bind, layer_name(i, "attn.Wk"),
                                           layer_name(i, "attn.bk")),
                              xh, lc ? &lc->wk : nullptr);
    Tensor v = linear_forward(resolve_site(store, bind, layer_name(i, "attn.Wv"),
                                           layer_name(i, "attn.bv")),
                              xh, lc ? &lc->wv : nullptr);
    Tensor q3 = reshaped(std::move(q), {B, T, h});
    Tensor k3 = reshaped(std::move(k), {B, T, h});
    Tensor v3 = reshaped(std::move(v), {B, T, h});
    Tensor mixed = attention_forward(q3, k3, v3, cfg.heads, &key_valid,
                                     lc ? &lc->att : nullptr);
    if (lc) {
      lc->q = std::move(q3);
      lc->k = std::move(k3);
      lc->v = std::move(v3);
    }
    Tensor attn_out =
        linear_forward(resolve_site(store, bind, layer_name(i, "attn.Wo"),
                                    layer_name(i, "attn.bo")),
                       reshaped(std::move(mixed), {B * T, h}),
                       lc ? &lc->wo : nullptr);
    if (drop)
      attn_out = dropout_forward(attn_out, cfg.dropout, *dropout_rng,
                                 lc ? &lc->drop_attn : nullptr);
    for (int64_t p = 0; p < x.size(); ++p) x[p] += attn_out[p];

    Tensor xh2 = layernorm_forward(
        store.get(bind.prefix + layer_name(i, "ln2.g")),
        store.get(bind.prefix + layer_name(i, "ln2.b")), x,
        lc ? &lc->ln2 : nullptr);
    Tensor m0 = linear_forward(resolve_site(store, bind, layer_name(i, "mlp.W0"),
                                            layer_name(i, "mlp.b0")),
                               xh2, lc ? &lc->w0 : nullptr);
    Tensor mr = relu_forward(m0, lc ? &lc->relu_mask : nullptr);
    Tensor m1 = linear_forward(resolve_site(store, bind, layer_name(i, "mlp.W1"),
                                            layer_name(i, "mlp.b1")),
                               mr, lc ? &lc->w1 : nullptr);
    if (drop)
      m1 = dropout_forward(m1, cfg.dropout, *dropout_rng,
                           lc ? &lc->drop_mlp : nullptr);
    for (int64_t p = 0; p < x.size(); ++p) x[p] += m1[p];
  }

  Tensor y = layernorm_forward(store.get(bind.prefix + "lnf.g"),
                               store.get(bind.prefix + "lnf.b"), x,
                               cache ? &cache->lnf : nullptr);

  Tensor feat({B, M, h});
  for (int b = 0; b < B; ++b)
    for (int m = 0; m < M; ++m) {
      const double* src = y.data() + (int64_t(b) * T + 3 * m + 1) * h;
      double* dst = feat.data() + (int64_t(b) * M + m) * h;
      for (int d = 0; d < h; ++d) dst[d] = src[d];
    }
  return feat;
}

void backbone_backward(ParamStore& store, const BackboneConfig& cfg,
                       const BackboneBinding& bind, const WindowBatch& batch,
                       const BackboneCache& cache, const Tensor& dfeat) {
  const int B = batch.B, M = batch.M, h = cfg.h;
  const int T = 3 * M;
  const int64_t BM = int64_t(B) * M;
  CORL_CHECK(dfeat.ndim() == 3 && dfeat.dim(0) == B && dfeat.dim(1) == M &&
                 dfeat.dim(2) == h,
             "dfeat shape mismatch");
  CORL_CHECK(int(cache.layers.size()) == cfg.layers,
             "backward without a training forward");

  // Scatter feature grads to the state-token positions.
  Tensor dy({B * T, h});
  for (int b = 0; b < B; ++b)
    for (int m = 0; m < M; ++m) {
      const double* src = dfeat.data() + (int64_t(b) * M + m) * h;
      double* dst = dy.data() + (int64_t(b) * T + 3 * m + 1) * h;
      for (int d = 0; d < h; ++d) dst[d] = src[d];
    }

  Tensor dx = layernorm_backward(store.get(bind.prefix + "lnf.g"),
                                 store.get(bind.prefix + "lnf.b"), cache.lnf,
                                 dy);

  for (int i = cfg.layers - 1; i >= 0; --i) {
    const BackboneLayerCache& lc = cache.layers[size_t(i)];
    // MLP branch.
    Tensor dm1 = lc.drop_mlp.size() ? dropout_backward(lc.drop_mlp, dx) : dx;
    Tensor dmr = linear_backward(
        resolve_site(store, bind, layer_name(i, "mlp.W1"),
                     layer_name(i, "mlp.b1")),
        lc.w1, dm1);
    Tensor dm0 = relu_backward(lc.relu_mask, dmr);
    Tensor dxh2 = linear_backward(
        resolve_site(store, bind, layer_name(i, "mlp.W0"),
                     layer_name(i, "mlp.b0")),
        lc.w0, dm0);
    Tensor dres = layernorm_backward(
        store.get(bind.prefix + layer_name(i, "ln2.g")),
        store.get(bind.prefix + layer_name(i, "ln2.b")), lc.ln2, dxh2);
    for (int64_t p = 0; p < dx.size(); ++p) dx[p] += dres[p];

    // Attention branch.
    Tensor dattn = lc.drop_attn.size() ? dropout_backward(lc.drop_attn, dx) : dx;
    Tensor dmixed = linear_backward(
        resolve_site(store, bind, layer_name(i, "attn.Wo"),
                     layer_name(i, "attn.bo")),
        lc.wo, dattn);
    Tensor dq, dk, dv;
    attention_backward(lc.att, lc.q, lc.k, lc.v, cfg.heads,
                       reshaped(std::move(dmixed), {B, T, h}), dq, dk, dv);
    Tensor dxh = linear_backward(
        resolve_site(store, bind, layer_name(i, "attn.Wq"),
                     layer_name(i, "attn.bq")),
        lc.wq, reshaped(std::move(dq), {B * T, h}));
    Tensor dxk = linear_backward(
        resolve_site(store, bind, layer_name(i, "attn.Wk"),
                     layer_name(i, "attn.bk")),
        lc.wk, reshaped(std::move(dk), {B * T, h}));
    Tensor dxv = linear_backward(
        resolve_site(store, bind, layer_name(i, "attn.Wv"),
                     layer_name(i, "attn.bv")),
        lc.wv, reshaped(std::move(dv), {B * T, h}));
    for (int64_t p = 0; p < dxh.size(); ++p) dxh[p] += dxk[p] + dxv[p];
    Tensor dres1 = layernorm_backward(
        store.get(bind.prefix + layer_name(i, "ln1.g")),
        store.get(bind.prefix + layer_name(i, "ln1.b")), lc.ln1, dxh);
    for (int64_t p = 0; p < dx.size(); ++p) dx[p] += dres1[p];
  }

  Tensor dtok = cache.drop_tok.size() ? dropout_backward(cache.drop_tok, dx)
                                      : std::move(dx);

  // De-interleave into modality grads and the time table.
  Tensor der({int(BM), cfg.h}), des({int(BM), cfg.h}), dea({int(BM), cfg.h});
  Param& time = store.get(bind.prefix + "emb.time");
  for (int b = 0; b < B; ++b)
    for (int m = 0; m < M; ++m) {
      const int64_t step = int64_t(b) * M + m;
      const int ts = batch.timesteps[size_t(step)];
      double* trow = time.grad.data() + int64_t(ts) * h;
      double* dst[3] = {der.data() + step * h, des.data() + step * h,
                        dea.data() + step * h};
      for (int j = 0; j < 3; ++j) {
        const double* src = dtok.data() + (int64_t(b) * T + 3 * m + j) * h;
        for (int d = 0; d < h; ++d) {
          dst[j][d] = src[d];
          trow[d] += src[d];
        }
      }
    }

  BackboneBinding plain;
  plain.prefix = bind.prefix;
  (void)linear_backward(resolve_site(store, plain, "emb.rtg.W", "emb.rtg.b"),
                        cache.emb_rtg, der);
  (void)linear_backward(resolve_site(store, plain, "emb.state.W", "emb.state.b"),
                        cache.emb_state, des);
  (void)linear_backward(
      resolve_site(store, plain, "emb.action.W", "emb.action.b"),
      cache.emb_action, dea);
}

}  // namespace corl
