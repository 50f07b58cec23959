#include "corl/ops.hpp"

#include <algorithm>
#include <cmath>

namespace corl {

namespace {
constexpr double kLnEps = 1e-5;

Tensor masked_weights(const Tensor& w, const std::vector<uint8_t>& mask) {
  CORL_CHECK(int64_t(mask.size()) == w.size(), "weight mask size mismatch");
  Tensor out = w;
  for (int64_t i = 0; i < out.size(); ++i)
    if (!mask[size_t(i)]) out[i] = 0.0;
  return out;
}
}  // namespace

Tensor linear_forward(const LinearSite& s, const Tensor& x, LinearCache* cache) {
  CORL_CHECK(s.W != nullptr, "linear site without weights");
  const Tensor& w = s.W->value;
  CORL_CHECK(w.ndim() == 2 && x.ndim() == 2 && x.dim(1) == w.dim(1),
             "linear shape mismatch");
  const int n = x.dim(0), in = w.dim(1), out = w.dim(0);

  Tensor y({n, out});
  if (s.mask) {
    Tensor weff = masked_weights(w, *s.mask);
    mm_xwt(x.data(), weff.data(), y.data(), n, in, out, false);
    if (cache) cache->weff = std::move(weff);
  } else {
    mm_xwt(x.data(), w.data(), y.data(), n, in, out, false);
  }
  if (s.b) add_bias(y.data(), s.b->value.data(), n, out);

  Tensor xAt;
  if (s.A) {
    CORL_CHECK(s.B != nullptr, "adapter requires both factors");
    const int r = s.A->value.dim(0);
    CORL_CHECK(s.A->value.dim(1) == in && s.B->value.dim(0) == out &&
                   s.B->value.dim(1) == r,
               "adapter shape mismatch");
    xAt = Tensor({n, r});
    mm_xwt(x.data(), s.A->value.data(), xAt.data(), n, in, r, false);
    mm_xwt(xAt.data(), s.B->value.data(), y.data(), n, r, out, true);
  }
  if (cache) {
    cache->x = x;
    cache->xAt = std::move(xAt);
  }
  return y;
}

Tensor linear_backward(const LinearSite& s, const LinearCache& cache,
                       const Tensor& dy) {
  CORL_CHECK(cache.x.ndim() == 2, "backward called before forward");
  const Tensor& w = s.W->value;
  const int n = cache.x.dim(0), in = w.dim(1), out = w.dim(0);
  CORL_CHECK(dy.ndim() == 2 && dy.dim(0) == n && dy.dim(1) == out,
             "linear backward shape mismatch");

  Tensor dx({n, in});
  const double* wback = s.mask ? cache.weff.data() : w.data();
  mm_dyw(dy.data(), wback, dx.data(), n, in, out);

  if (s.mask) {
    Tensor scratch({out, in});
    mm_dytx(dy.data(), cache.x.data(), scratch.data(), n, in, out);
    double* dw = s.W->grad.data();
    const auto& m = *s.mask;
    for (int64_t i = 0; i < scratch.size(); ++i)
      if (m[size_t(i)]) dw[i] += scratch[i];
  } else {
    mm_dytx(dy.data(), cache.x.data(), s.W->grad.data(), n, in, out);
  }
  if (s.b) bias_grad(dy.data(), s.b->grad.data(), n, out);

  if (s.A) {
    const int r = s.A->value.dim(0);
    Tensor dxAt({n, r});
    mm_dyw(dy.data(), s.B->value.data(), dxAt.data(), n, r, out);
    mm_dytx(dy.data(), cache.xAt.data(), s.B->grad.data(), n, r, out);
    mm_dytx(dxAt.data(), cache.x.data(), s.A->grad.data(), n, in, r);
    mm_dyw(dxAt.data(), s.A->value.data(), dx.data(), n, in, r);
  }
  return dx;
}

Tensor layernorm_forward(const Param& gain, const Param& bias, const Tensor& x,
                         LayerNormCache* cache) {
  CORL_CHECK(x.ndim() == 2, "layernorm expects [N,D]");
  const int n = x.dim(0), d = x.dim(1);
  CORL_CHECK(gain.value.size() == d && bias.value.size() == d,
             "layernorm param size mismatch");
  Tensor y({n, d});
  Tensor xhat({n, d});
  Tensor rstd({n});
  count_madds(uint64_t(n) * d * 4);
  for (int r = 0; r < n; ++r) {
    const double* xr = x.data() + size_t(r) * d;
    double mu = 0.0;
    for (int i = 0; i < d; ++i) mu += xr[i];
    mu /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) {
      double c = xr[i] - mu;
      var += c * c;
    }
    var /= d;
    const double rs = 1.0 / std::sqrt(var + kLnEps);
    rstd[r] = rs;
    double* xh = xhat.data() + size_t(r) * d;
    double* yr = y.data() + size_t(r) * d;
    for (int i = 0; i < d; ++i) {
      xh[i] = (xr[i] - mu) * rs;
      yr[i] = xh[i] * gain.value[i] + bias.value[i];
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

Tensor layernorm_backward(Param& gain, Param& bias, const LayerNormCache& cache,
                          const Tensor& dy) {
  const int n = dy.dim(0), d = dy.dim(1);
  Tensor dx({n, d});
  count_madds(uint64_t(n) * d * 6);
  for (int r = 0; r < n; ++r) {
    const double* dyr = dy.data() + size_t(r) * d;
    const double* xh = cache.xhat.data() + size_t(r) * d;
    double* dxr = dx.data() + size_t(r) * d;
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (int i = 0; i < d; ++i) {
      const double dxh = dyr[i] * gain.value[i];
      sum_dxhat += dxh;
      sum_dxhat_xhat += dxh * xh[i];
      gain.grad[i] += dyr[i] * xh[i];
      bias.grad[i] += dyr[i];
    }
    const double inv_d = 1.0 / d;
    const double rs = cache.rstd[r];
    for (int i = 0; i < d; ++i) {
      const double dxh = dyr[i] * gain.value[i];
      dxr[i] = rs * (dxh - inv_d * sum_dxhat - xh[i] * inv_d * sum_dxhat_xhat);
    }
  }
  return dx;
}

Tensor relu_forward(const Tensor& x, Tensor* mask_cache) {
  Tensor y = x;
  Tensor mask(x.shape);
  for (int64_t i = 0; i < y.size(); ++i) {
    if (y[i] > 0.0) {
      mask[i] = 1.0;
    } else {
      y[i] = 0.0;
    }
  }
  if (mask_cache) *mask_cache = std::move(mask);
  return y;
}

Tensor relu_backward(const Tensor& mask, const Tensor& dy) {
  Tensor dx = dy;
  for (int64_t i = 0; i < dx.size(); ++i) dx[i] *= mask[i];
  return dx;
}

Tensor dropout_forward(const Tensor& x, double p, Rng& rng, Tensor* scale_cache) {
  CORL_CHECK(p >= 0.0 && p < 1.0, "dropout rate must be in [0,1)");
  if (p == 0.0) {
    if (scale_cache) *scale_cache = Tensor();
    return x;
  }
  const double keep = 1.0 - p;
  const double scale = 1.0 / keep;
  Tensor y = x;
  Tensor s(x.shape);
  for (int64_t i = 0; i < y.size(); ++i) {
    const double m = rng.uniform() < keep ? scale : 0.0;
    s[i] = m;
    y[i] *= m;
  }
  if (scale_cache) *scale_cache = std::move(s);
  return y;
}

Tensor dropout_backward(const Tensor& scale, const Tensor& dy) {
  if (scale.size() == 0) return dy;
  Tensor dx = dy;
  for (int64_t i = 0; i < dx.size(); ++i) dx[i] *= scale[i];
  return dx;
}

Tensor attention_forward(const Tensor& q, const Tensor& k, const Tensor& v,
                         int n_heads, const std::vector<uint8_t>* key_valid,
                         AttentionCache* cache) {
  CORL_CHECK(q.ndim() == 3 && q.same_shape(k) && q.same_shape(v),
             "attention expects matching [B,T,h]");
  const int b = q.dim(0), t = q.dim(1), h = q.dim(2);
  CORL_CHECK(h % n_heads == 0, "width not divisible by head count");
  CORL_CHECK(!key_valid || int64_t(key_valid->size()) == int64_t(b) * t,
             "key validity mask size mismatch");
  const int dh = h / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(double(dh));

  Tensor out({b, t, h});
  Tensor att({b, n_heads, t, t});
  count_madds(uint64_t(b) * n_heads * t * (t + 1) * dh);
  for (int bi = 0; bi < b; ++bi) {
    const uint8_t* kvalid =
        key_valid ? key_valid->data() + size_t(bi) * t : nullptr;
    for (int hd = 0; hd < n_heads; ++hd) {
      const int off = hd * dh;
      double* arow_base =
          att.data() + ((size_t(bi) * n_heads + hd) * t) * t;
      for (int ti = 0; ti < t; ++ti) {
        const double* qv = q.data() + (size_t(bi) * t + ti) * h + off;
        double* arow = arow_base + size_t(ti) * t;
        double mx = -1e300;
        for (int tj = 0; tj <= ti; ++tj) {
          if (kvalid && !kvalid[tj] && tj != ti) {
            arow[tj] = -1e300;  // exp underflows to exactly zero below
            continue;
          }
          const double* kv = k.data() + (size_t(bi) * t + tj) * h + off;
          double s = 0.0;
          for (int d = 0; d < dh; ++d) s += qv[d] * kv[d];
          s *= inv_sqrt;
          arow[tj] = s;
          mx = std::max(mx, s);
        }
        double z = 0.0;
        for (int tj = 0; tj <= ti; ++tj) {
          arow[tj] = std::exp(arow[tj] - mx);
          z += arow[tj];
        }
        const double inv_z = 1.0 / z;
        double* ov = out.data() + (size_t(bi) * t + ti) * h + off;
        for (int tj = 0; tj <= ti; ++tj) {
          arow[tj] *= inv_z;
          const double w = arow[tj];
          const double* vv = v.data() + (size_t(bi) * t + tj) * h + off;
          for (int d = 0; d < dh; ++d) ov[d] += w * vv[d];
        }
      }
    }
  }
  if (cache) cache->att = std::move(att);
  return out;
}

void attention_backward(const AttentionCache& cache, const Tensor& q,
                        const Tensor& k, const Tensor& v, int n_heads,
                        const Tensor& dout, Tensor& dq, Tensor& dk, Tensor& dv) {
  const int b = q.dim(0), t = q.dim(1), h = q.dim(2);
  const int dh = h / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(double(dh));
  dq = Tensor({b, t, h});
  dk = Tensor({b, t, h});
  dv = Tensor({b, t, h});
  count_madds(uint64_t(b) * n_heads * t * (t + 1) * dh * 2);
  std::vector<double> ds(static_cast<size_t>(t), 0.0);
  for (int bi = 0; bi < b; ++bi) {
    for (int hd = 0; hd < n_heads; ++hd) {
      const int off = hd * dh;
      const double* arow_base =
          cache.att.data() + ((size_t(bi) * n_heads + hd) * t) * t;
      for (int ti = 0; ti < t; ++ti) {
        const double* arow = arow_base + size_t(ti) * t;
        const double* dov = dout.data() + (size_t(bi) * t + ti) * h + off;
        // datt[tj] = dout . v[tj]; dv[tj] += att[tj] * dout
        double dot_sum = 0.0;
        for (int tj = 0; tj <= ti; ++tj) {
          const double* vv = v.data() + (size_t(bi) * t + tj) * h + off;
          double* dvv = dv.data() + (size_t(bi) * t + tj) * h + off;
          double da = 0.0;
          for (int d = 0; d < dh; ++d) {
            da += dov[d] * vv[d];
            dvv[d] += arow[tj] * dov[d];
          }
          ds[size_t(tj)] = da;
          dot_sum += da * arow[tj];
        }
        // softmax backward, then into q/k
        const double* qv = q.data() + (size_t(bi) * t + ti) * h + off;
        double* dqv = dq.data() + (size_t(bi) * t + ti) * h + off;
        for (int tj = 0; tj <= ti; ++tj) {
          const double dlogit = arow[tj] * (ds[size_t(tj)] - dot_sum) * inv_sqrt;
          const double* kv = k.data() + (size_t(bi) * t + tj) * h + off;
          double* dkv = dk.data() + (size_t(bi) * t + tj) * h + off;
          for (int d = 0; d < dh; ++d) {
            dqv[d] += dlogit * kv[d];
            dkv[d] += dlogit * qv[d];
          }
        }
      }
    }
  }
}

double masked_mse(const Tensor& pred, const Tensor& target,
                  const std::vector<uint8_t>& mask, Tensor* dpred) {
  CORL_CHECK(pred.same_shape(target), "loss shape mismatch");
  CORL_CHECK(pred.ndim() >= 2, "loss expects [...,A]");
  const int a = pred.dim(pred.ndim() - 1);
  const int64_t positions = pred.size() / a;
  CORL_CHECK(int64_t(mask.size()) == positions, "loss mask size mismatch");
  int64_t live = 0;
  for (uint8_t m : mask) live += m != 0;
  CORL_CHECK(live > 0, "loss over fully masked window");

  if (dpred) *dpred = Tensor(pred.shape);
  double loss = 0.0;
  const double inv = 1.0 / double(live);
  for (int64_t p = 0; p < positions; ++p) {
    if (!mask[size_t(p)]) continue;
    for (int i = 0; i < a; ++i) {
      const int64_t idx = p * a + i;
      const double diff = pred[idx] - target[idx];
      loss += diff * diff;
      if (dpred) (*dpred)[idx] = 2.0 * diff * inv;
    }
  }
  return loss * inv;
}

std::vector<double> softmax(const std::vector<double>& logits) {
  CORL_CHECK(!logits.empty(), "softmax over empty logits");
  double mx = logits[0];
  for (double l : logits) mx = std::max(mx, l);
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (double& x : p) x /= z;
  return p;
}

std::vector<double> softmax_backward(const std::vector<double>& p,
                                     const std::vector<double>& dp) {
  double dot = 0.0;
  for (size_t i = 0; i < p.size(); ++i) dot += p[i] * dp[i];
  std::vector<double> dl(p.size());
  for (size_t i = 0; i < p.size(); ++i) dl[i] = p[i] * (dp[i] - dot);
  return dl;
}

}  // namespace corl
