#pragma once

#include <cstdint>
#include <vector>

#include "corl/common.hpp"

namespace corl {

// Dense row-major tensor of doubles. Double throughout: the finite-difference
// gradient harness needs ~1e-11 headroom and the models here are small enough
// that precision costs nothing.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    v.assign(static_cast<size_t>(count(shape)), 0.0);
  }

  static int64_t count(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      CORL_CHECK(d >= 0, "tensor dim must be non-negative");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  int64_t size() const { return static_cast<int64_t>(v.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  double* data() { return v.data(); }
  const double* data() const { return v.data(); }

  double& operator[](int64_t i) { return v[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return v[static_cast<size_t>(i)]; }

  double& at2(int i, int j) { return v[size_t(i) * shape[1] + j]; }
  double at2(int i, int j) const { return v[size_t(i) * shape[1] + j]; }
  double& at3(int i, int j, int k) {
    return v[(size_t(i) * shape[1] + j) * shape[2] + k];
  }
  double at3(int i, int j, int k) const {
    return v[(size_t(i) * shape[1] + j) * shape[2] + k];
  }

  void zero() { std::fill(v.begin(), v.end(), 0.0); }
  void fill(double x) { std::fill(v.begin(), v.end(), x); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

// ----------------------------- kernels -----------------------------
// Mult-add counter feeding the inference-complexity report. One increment per
// kernel call, so the overhead is invisible next to the arithmetic itself.
extern thread_local uint64_t g_madd_count;
inline void count_madds(uint64_t n) { g_madd_count += n; }

// y[N,out] = x[N,in] * W^T (+ y if accumulate). W is [out,in] row-major, so
// each output element is a dot product of two contiguous rows.
void mm_xwt(const double* x, const double* w, double* y, int n, int in, int out,
            bool accumulate);

// dx[N,in] += dy[N,out] * W
void mm_dyw(const double* dy, const double* w, double* dx, int n, int in, int out);

// dW[out,in] += dy^T[N,out] * x[N,in]
void mm_dytx(const double* dy, const double* x, double* dw, int n, int in, int out);

void add_bias(double* y, const double* b, int n, int out);
void bias_grad(const double* dy, double* db, int n, int out);

}  // namespace corl
