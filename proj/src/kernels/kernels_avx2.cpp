#include <immintrin.h>

#include <cmath>
#include <cstddef>
#include <cstring>
#include <vector>

#include "freqdiff/kernels.hpp"
#include "kernels_common.hpp"

// Compiled with -mavx2 -mfma; only reachable through the dispatch table after
// a cpuid check, so plain binaries stay runnable on older cores.

namespace freqdiff::kernels {
namespace {

using std::size_t;

constexpr int MR = 6;
constexpr int NR = 8;
constexpr int KC = 320;
constexpr int MC = 72;    // multiple of MR
constexpr int NC = 1024;  // multiple of NR

// A panel: column-of-strips layout, strip = MR consecutive rows, k-major,
// alpha folded in. Zero-padded to full strips so the microkernel never branches.
void pack_a(bool trans_a, const double* a, int lda, int ic, int pc, int mc,
            int kc, double alpha, double* buf) {
  for (int i0 = 0; i0 < mc; i0 += MR) {
    int ib = std::min(MR, mc - i0);
    for (int p = 0; p < kc; ++p) {
      for (int i = 0; i < MR; ++i) {
        double v = 0.0;
        if (i < ib) {
          int row = ic + i0 + i, col = pc + p;
          v = trans_a ? a[static_cast<size_t>(col) * lda + row]
                      : a[static_cast<size_t>(row) * lda + col];
        }
        *buf++ = alpha * v;
      }
    }
  }
}

void pack_b(bool trans_b, const double* b, int ldb, int pc, int jc, int kc,
            int nc, double* buf) {
  for (int j0 = 0; j0 < nc; j0 += NR) {
    int jb = std::min(NR, nc - j0);
    for (int p = 0; p < kc; ++p) {
      for (int j = 0; j < NR; ++j) {
        double v = 0.0;
        if (j < jb) {
          int row = pc + p, col = jc + j0 + j;
          v = trans_b ? b[static_cast<size_t>(col) * ldb + row]
                      : b[static_cast<size_t>(row) * ldb + col];
        }
        *buf++ = v;
      }
    }
  }
}

// acc[MR][NR] over one packed strip pair.
inline void kern_6x8(int kc, const double* ap, const double* bp, double* acc) {
  __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
  __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
  __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
  __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
  __m256d c40 = _mm256_setzero_pd(), c41 = _mm256_setzero_pd();
  __m256d c50 = _mm256_setzero_pd(), c51 = _mm256_setzero_pd();
  for (int p = 0; p < kc; ++p) {
    __m256d b0 = _mm256_loadu_pd(bp);
    __m256d b1 = _mm256_loadu_pd(bp + 4);
    __m256d a0 = _mm256_broadcast_sd(ap + 0);
    __m256d a1 = _mm256_broadcast_sd(ap + 1);
    c00 = _mm256_fmadd_pd(a0, b0, c00);
    c01 = _mm256_fmadd_pd(a0, b1, c01);
    c10 = _mm256_fmadd_pd(a1, b0, c10);
    c11 = _mm256_fmadd_pd(a1, b1, c11);
    __m256d a2 = _mm256_broadcast_sd(ap + 2);
    __m256d a3 = _mm256_broadcast_sd(ap + 3);
    c20 = _mm256_fmadd_pd(a2, b0, c20);
    c21 = _mm256_fmadd_pd(a2, b1, c21);
    c30 = _mm256_fmadd_pd(a3, b0, c30);
    c31 = _mm256_fmadd_pd(a3, b1, c31);
    __m256d a4 = _mm256_broadcast_sd(ap + 4);
    __m256d a5 = _mm256_broadcast_sd(ap + 5);
    c40 = _mm256_fmadd_pd(a4, b0, c40);
    c41 = _mm256_fmadd_pd(a4, b1, c41);
    c50 = _mm256_fmadd_pd(a5, b0, c50);
    c51 = _mm256_fmadd_pd(a5, b1, c51);
    ap += MR;
    bp += NR;
  }
  _mm256_storeu_pd(acc + 0 * NR + 0, c00);
  _mm256_storeu_pd(acc + 0 * NR + 4, c01);
  _mm256_storeu_pd(acc + 1 * NR + 0, c10);
  _mm256_storeu_pd(acc + 1 * NR + 4, c11);
  _mm256_storeu_pd(acc + 2 * NR + 0, c20);
  _mm256_storeu_pd(acc + 2 * NR + 4, c21);
  _mm256_storeu_pd(acc + 3 * NR + 0, c30);
  _mm256_storeu_pd(acc + 3 * NR + 4, c31);
  _mm256_storeu_pd(acc + 4 * NR + 0, c40);
  _mm256_storeu_pd(acc + 4 * NR + 4, c41);
  _mm256_storeu_pd(acc + 5 * NR + 0, c50);
  _mm256_storeu_pd(acc + 5 * NR + 4, c51);
}

thread_local std::vector<double> g_abuf;
thread_local std::vector<double> g_bbuf;

void gemm_avx2(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
               const double* a, int lda, const double* b, int ldb, double beta,
               double* c, int ldc) {
  if (beta != 1.0) {
    for (int i = 0; i < m; ++i) {
      double* crow = c + static_cast<size_t>(i) * ldc;
      if (beta == 0.0)
        std::memset(crow, 0, sizeof(double) * static_cast<size_t>(n));
      else
        for (int j = 0; j < n; ++j) crow[j] *= beta;
    }
  }
  if (alpha == 0.0 || k == 0 || m == 0 || n == 0) return;

  g_abuf.resize(static_cast<size_t>(MC) * KC);
  g_bbuf.resize(static_cast<size_t>(KC) * NC);
  alignas(32) double acc[MR * NR];

  for (int jc = 0; jc < n; jc += NC) {
    int nc = std::min(NC, n - jc);
    int nc_strips = (nc + NR - 1) / NR;
    for (int pc = 0; pc < k; pc += KC) {
      int kc = std::min(KC, k - pc);
      pack_b(trans_b, b, ldb, pc, jc, kc, nc, g_bbuf.data());
      for (int ic = 0; ic < m; ic += MC) {
        int mc = std::min(MC, m - ic);
        int mc_strips = (mc + MR - 1) / MR;
        pack_a(trans_a, a, lda, ic, pc, mc, kc, alpha, g_abuf.data());
        for (int js = 0; js < nc_strips; ++js) {
          const double* bp = g_bbuf.data() + static_cast<size_t>(js) * kc * NR;
          int jb = std::min(NR, nc - js * NR);
          for (int is = 0; is < mc_strips; ++is) {
            const double* ap = g_abuf.data() + static_cast<size_t>(is) * kc * MR;
            int ib = std::min(MR, mc - is * MR);
            kern_6x8(kc, ap, bp, acc);
            double* cblk = c + static_cast<size_t>(ic + is * MR) * ldc + jc + js * NR;
            for (int i = 0; i < ib; ++i)
              for (int j = 0; j < jb; ++j)
                cblk[static_cast<size_t>(i) * ldc + j] += acc[i * NR + j];
          }
        }
      }
    }
  }
}

// exp on 4 lanes: round-to-nearest split x = n ln2 + r, degree-13 Horner on r,
// then scale by 2^n in two halves so subnormal results and the overflow edge
// behave like std::exp. Clamp bounds sit just past where double saturates.
inline __m256d exp_pd(__m256d x) {
  const __m256d hi = _mm256_set1_pd(710.0);
  const __m256d lo = _mm256_set1_pd(-746.0);
  x = _mm256_min_pd(_mm256_max_pd(x, lo), hi);
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634074);
  __m256d nf = _mm256_round_pd(_mm256_mul_pd(x, log2e),
                               _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  const __m256d ln2_hi = _mm256_set1_pd(6.93145751953125e-1);
  const __m256d ln2_lo = _mm256_set1_pd(1.42860682030941723212e-6);
  __m256d r = _mm256_fnmadd_pd(nf, ln2_hi, x);
  r = _mm256_fnmadd_pd(nf, ln2_lo, r);
  const double k13 = 1.6059043836821613e-10, k12 = 2.08767569878681e-9,
               k11 = 2.5052108385441720e-8, k10 = 2.7557319223985893e-7,
               k9 = 2.7557319223985888e-6, k8 = 2.4801587301587302e-5,
               k7 = 1.9841269841269841e-4, k6 = 1.3888888888888889e-3,
               k5 = 8.3333333333333333e-3, k4 = 4.1666666666666664e-2,
               k3 = 1.6666666666666666e-1, k2 = 0.5;
  __m256d p = _mm256_set1_pd(k13);
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(k12));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(k11));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(k10));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(k9));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(k8));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(k7));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(k6));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(k5));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(k4));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(k3));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(k2));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0));
  __m128i n32 = _mm256_cvtpd_epi32(nf);
  __m128i n2_32 = _mm_srai_epi32(n32, 1);  // floor(n/2)
  __m128i n1_32 = _mm_sub_epi32(n32, n2_32);
  const __m256i bias = _mm256_set1_epi64x(1023);
  __m256i e1 = _mm256_slli_epi64(_mm256_add_epi64(_mm256_cvtepi32_epi64(n1_32), bias), 52);
  __m256i e2 = _mm256_slli_epi64(_mm256_add_epi64(_mm256_cvtepi32_epi64(n2_32), bias), 52);
  return _mm256_mul_pd(_mm256_mul_pd(p, _mm256_castsi256_pd(e1)),
                       _mm256_castsi256_pd(e2));
}

inline __m256d sigmoid_pd(__m256d x) {
  __m256d e = exp_pd(_mm256_sub_pd(_mm256_setzero_pd(), x));
  return _mm256_div_pd(_mm256_set1_pd(1.0), _mm256_add_pd(_mm256_set1_pd(1.0), e));
}

void add_avx2(const double* x, const double* y, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] + y[i];
}
void sub_avx2(const double* x, const double* y, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] - y[i];
}
void mul_avx2(const double* x, const double* y, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] * y[i];
}
void axpy_avx2(double a, const double* x, double* y, size_t n) {
  __m256d av = _mm256_set1_pd(a);
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}
void scale_avx2(double a, double* x, size_t n) {
  __m256d av = _mm256_set1_pd(a);
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(x + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) x[i] *= a;
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
}

double dot_avx2(const double* x, const double* y, size_t n) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc);
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}
double sum_avx2(const double* x, size_t n) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}
double sumsq_avx2(const double* x, size_t n) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d v = _mm256_loadu_pd(x + i);
    acc = _mm256_fmadd_pd(v, v, acc);
  }
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i] * x[i];
  return s;
}

void vexp_avx2(const double* x, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, exp_pd(_mm256_loadu_pd(x + i)));
  for (; i < n; ++i) out[i] = std::exp(x[i]);
}
void relu_avx2(const double* x, double* out, size_t n) {
  __m256d z = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_max_pd(z, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}
void relu_bwd_avx2(const double* x, const double* dy, double* dx, size_t n) {
  __m256d z = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), z, _CMP_GT_OQ);
    __m256d g = _mm256_and_pd(mask, _mm256_loadu_pd(dy + i));
    _mm256_storeu_pd(dx + i, _mm256_add_pd(_mm256_loadu_pd(dx + i), g));
  }
  for (; i < n; ++i) dx[i] += x[i] > 0.0 ? dy[i] : 0.0;
}
void sigmoid_avx2(const double* x, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, sigmoid_pd(_mm256_loadu_pd(x + i)));
  for (; i < n; ++i) out[i] = detail::sigmoid1(x[i]);
}
void silu_avx2(const double* x, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d v = _mm256_loadu_pd(x + i);
    _mm256_storeu_pd(out + i, _mm256_mul_pd(v, sigmoid_pd(v)));
  }
  for (; i < n; ++i) out[i] = detail::silu1(x[i]);
}
void silu_bwd_avx2(const double* x, const double* dy, double* dx, size_t n) {
  const __m256d one = _mm256_set1_pd(1.0);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d v = _mm256_loadu_pd(x + i);
    __m256d s = sigmoid_pd(v);
    // s * (1 + x * (1 - s))
    __m256d g = _mm256_mul_pd(s, _mm256_fmadd_pd(v, _mm256_sub_pd(one, s), one));
    __m256d d = _mm256_fmadd_pd(_mm256_loadu_pd(dy + i), g, _mm256_loadu_pd(dx + i));
    _mm256_storeu_pd(dx + i, d);
  }
  for (; i < n; ++i) dx[i] += dy[i] * detail::silu_grad1(x[i]);
}

void adam_avx2(double* p, const double* g, double* m, double* v, size_t n,
               double lr, double beta1, double beta2, double eps, double decay,
               long step) {
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  __m256d vb1 = _mm256_set1_pd(beta1), vb1c = _mm256_set1_pd(1.0 - beta1);
  __m256d vb2 = _mm256_set1_pd(beta2), vb2c = _mm256_set1_pd(1.0 - beta2);
  __m256d vbc1 = _mm256_set1_pd(1.0 / bc1), vbc2 = _mm256_set1_pd(1.0 / bc2);
  __m256d vlr = _mm256_set1_pd(lr), veps = _mm256_set1_pd(eps);
  __m256d vwd = _mm256_set1_pd(decay);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d gi = _mm256_loadu_pd(g + i);
    __m256d mi = _mm256_fmadd_pd(vb1c, gi, _mm256_mul_pd(vb1, _mm256_loadu_pd(m + i)));
    __m256d vi = _mm256_fmadd_pd(vb2c, _mm256_mul_pd(gi, gi),
                                 _mm256_mul_pd(vb2, _mm256_loadu_pd(v + i)));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    __m256d mh = _mm256_mul_pd(mi, vbc1);
    __m256d vh = _mm256_mul_pd(vi, vbc2);
    __m256d den = _mm256_add_pd(_mm256_sqrt_pd(vh), veps);
    __m256d pi = _mm256_loadu_pd(p + i);
    __m256d upd = _mm256_fmadd_pd(vwd, pi, _mm256_div_pd(mh, den));
    _mm256_storeu_pd(p + i, _mm256_fnmadd_pd(vlr, upd, pi));
  }
  if (i < n)
    detail::adam_step_scalar(p + i, g + i, m + i, v + i, n - i, lr, beta1,
                             beta2, eps, decay, step);
}

void tanh_avx2(const double* x, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = std::tanh(x[i]);
}
void tanh_bwd_avx2(const double* x, const double* dy, double* dx, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    double t = std::tanh(x[i]);
    dx[i] += dy[i] * (1.0 - t * t);
  }
}
void gelu_avx2(const double* x, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = detail::gelu1(x[i]);
}
void gelu_bwd_avx2(const double* x, const double* dy, double* dx, size_t n) {
  for (size_t i = 0; i < n; ++i) dx[i] += dy[i] * detail::gelu_grad1(x[i]);
}

}  // namespace

namespace detail {
const Ops avx2_ops = {
    gemm_avx2, add_avx2,     sub_avx2,      mul_avx2,
    axpy_avx2, scale_avx2,   dot_avx2,      sum_avx2,
    sumsq_avx2, vexp_avx2,   relu_avx2,     relu_bwd_avx2,
    sigmoid_avx2, silu_avx2, silu_bwd_avx2, tanh_avx2,
    tanh_bwd_avx2, gelu_avx2, gelu_bwd_avx2, adam_avx2,
};
}  // namespace detail

}  // namespace freqdiff::kernels
