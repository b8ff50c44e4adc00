#include <cmath>
#include <cstddef>

#include "freqdiff/kernels.hpp"
#include "kernels_common.hpp"

namespace freqdiff::kernels {
namespace {

using std::size_t;

inline const double* row_nt(const double* a, int lda, int i) { return a + static_cast<size_t>(i) * lda; }

void gemm_scalar(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                 const double* a, int lda, const double* b, int ldb,
                 double beta, double* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<size_t>(i) * ldc;
    if (beta == 0.0) {
      for (int j = 0; j < n; ++j) crow[j] = 0.0;
    } else if (beta != 1.0) {
      for (int j = 0; j < n; ++j) crow[j] *= beta;
    }
  }
  if (alpha == 0.0 || k == 0) return;
  // i-p-j order keeps the inner loop streaming over rows of b.
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<size_t>(i) * ldc;
    for (int p = 0; p < k; ++p) {
      double av = trans_a ? a[static_cast<size_t>(p) * lda + i]
                          : a[static_cast<size_t>(i) * lda + p];
      double s = alpha * av;
      if (s == 0.0) continue;
      if (!trans_b) {
        const double* brow = row_nt(b, ldb, p);
        for (int j = 0; j < n; ++j) crow[j] += s * brow[j];
      } else {
        for (int j = 0; j < n; ++j) crow[j] += s * b[static_cast<size_t>(j) * ldb + p];
      }
    }
  }
}

void add_scalar(const double* x, const double* y, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
}
void sub_scalar(const double* x, const double* y, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] - y[i];
}
void mul_scalar(const double* x, const double* y, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}
void axpy_scalar(double a, const double* x, double* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}
void scale_scalar(double a, double* x, size_t n) {
  for (size_t i = 0; i < n; ++i) x[i] *= a;
}
double dot_scalar(const double* x, const double* y, size_t n) {
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}
double sum_scalar(const double* x, size_t n) {
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) s += x[i];
  return s;
}
double sumsq_scalar(const double* x, size_t n) {
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) s += x[i] * x[i];
  return s;
}

void vexp_scalar(const double* x, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = std::exp(x[i]);
}
void relu_scalar(const double* x, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}
void relu_bwd_scalar(const double* x, const double* dy, double* dx, size_t n) {
  for (size_t i = 0; i < n; ++i) dx[i] += x[i] > 0.0 ? dy[i] : 0.0;
}
void sigmoid_scalar(const double* x, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = detail::sigmoid1(x[i]);
}
void silu_scalar(const double* x, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = detail::silu1(x[i]);
}
void silu_bwd_scalar(const double* x, const double* dy, double* dx, size_t n) {
  for (size_t i = 0; i < n; ++i) dx[i] += dy[i] * detail::silu_grad1(x[i]);
}
void tanh_scalar(const double* x, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = std::tanh(x[i]);
}
void tanh_bwd_scalar(const double* x, const double* dy, double* dx, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    double t = std::tanh(x[i]);
    dx[i] += dy[i] * (1.0 - t * t);
  }
}
void gelu_scalar(const double* x, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = detail::gelu1(x[i]);
}
void gelu_bwd_scalar(const double* x, const double* dy, double* dx, size_t n) {
  for (size_t i = 0; i < n; ++i) dx[i] += dy[i] * detail::gelu_grad1(x[i]);
}

void adam_scalar(double* p, const double* g, double* m, double* v, size_t n,
                 double lr, double beta1, double beta2, double eps,
                 double decay, long step) {
  detail::adam_step_scalar(p, g, m, v, n, lr, beta1, beta2, eps, decay, step);
}

}  // namespace

namespace detail {
const Ops scalar_ops = {
    gemm_scalar, add_scalar,     sub_scalar,      mul_scalar,
    axpy_scalar, scale_scalar,   dot_scalar,      sum_scalar,
    sumsq_scalar, vexp_scalar,   relu_scalar,     relu_bwd_scalar,
    sigmoid_scalar, silu_scalar, silu_bwd_scalar, tanh_scalar,
    tanh_bwd_scalar, gelu_scalar, gelu_bwd_scalar, adam_scalar,
};
}  // namespace detail

}  // namespace freqdiff::kernels
