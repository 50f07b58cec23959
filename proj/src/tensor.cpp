#include "corl/tensor.hpp"

namespace corl {

thread_local uint64_t g_madd_count = 0;

void mm_xwt(const double* x, const double* w, double* y, int n, int in, int out,
            bool accumulate) {
  count_madds(uint64_t(n) * in * out);
  for (int r = 0; r < n; ++r) {
    const double* xr = x + size_t(r) * in;
    double* yr = y + size_t(r) * out;
    int o = 0;
    for (; o + 4 <= out; o += 4) {
      const double* w0 = w + size_t(o) * in;
      const double* w1 = w0 + in;
      const double* w2 = w1 + in;
      const double* w3 = w2 + in;
      double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
      for (int i = 0; i < in; ++i) {
        const double xi = xr[i];
        a0 += xi * w0[i];
        a1 += xi * w1[i];
        a2 += xi * w2[i];
        a3 += xi * w3[i];
      }
      if (accumulate) {
        yr[o] += a0;
        yr[o + 1] += a1;
        yr[o + 2] += a2;
        yr[o + 3] += a3;
      } else {
        yr[o] = a0;
        yr[o + 1] = a1;
        yr[o + 2] = a2;
        yr[o + 3] = a3;
      }
    }
    for (; o < out; ++o) {
      const double* wo = w + size_t(o) * in;
      double acc = 0.0;
      for (int i = 0; i < in; ++i) acc += xr[i] * wo[i];
      yr[o] = accumulate ? yr[o] + acc : acc;
    }
  }
}

void mm_dyw(const double* dy, const double* w, double* dx, int n, int in, int out) {
  count_madds(uint64_t(n) * in * out);
  for (int r = 0; r < n; ++r) {
    const double* dyr = dy + size_t(r) * out;
    double* dxr = dx + size_t(r) * in;
    for (int o = 0; o < out; ++o) {
      const double g = dyr[o];
      if (g == 0.0) continue;
      const double* wo = w + size_t(o) * in;
      for (int i = 0; i < in; ++i) dxr[i] += g * wo[i];
    }
  }
}

void mm_dytx(const double* dy, const double* x, double* dw, int n, int in, int out) {
  count_madds(uint64_t(n) * in * out);
  for (int r = 0; r < n; ++r) {
    const double* dyr = dy + size_t(r) * out;
    const double* xr = x + size_t(r) * in;
    for (int o = 0; o < out; ++o) {
      const double g = dyr[o];
      if (g == 0.0) continue;
      double* dwo = dw + size_t(o) * in;
      for (int i = 0; i < in; ++i) dwo[i] += g * xr[i];
    }
  }
}

void add_bias(double* y, const double* b, int n, int out) {
  count_madds(uint64_t(n) * out);
  for (int r = 0; r < n; ++r) {
    double* yr = y + size_t(r) * out;
    for (int o = 0; o < out; ++o) yr[o] += b[o];
  }
}

void bias_grad(const double* dy, double* db, int n, int out) {
  count_madds(uint64_t(n) * out);
  for (int r = 0; r < n; ++r) {
    const double* dyr = dy + size_t(r) * out;
    for (int o = 0; o < out; ++o) db[o] += dyr[o];
  }
}

}  // namespace corl
