#include <immintrin.h>

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <vector>

#include "freqdiff/kernels.hpp"

// Compiled with -mavx512f -mavx512dq -mavx512vl -mfma. Only the GEMM gets a
// 512-bit path: the elementwise ops are memory-bound, so the avx512 table
// keeps the 256-bit implementations for them.

namespace freqdiff::kernels {
namespace {

using std::size_t;

constexpr int MR = 8;
constexpr int NR = 16;
constexpr int KC = 320;
constexpr int MC = 96;    // multiple of MR
constexpr int NC = 1024;  // multiple of NR

void pack_a512(bool trans_a, const double* a, int lda, int ic, int pc, int mc,
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

void pack_b512(bool trans_b, const double* b, int ldb, int pc, int jc, int kc,
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

inline void kern_8x16(int kc, const double* ap, const double* bp, double* acc) {
  __m512d c00 = _mm512_setzero_pd(), c01 = _mm512_setzero_pd();
  __m512d c10 = _mm512_setzero_pd(), c11 = _mm512_setzero_pd();
  __m512d c20 = _mm512_setzero_pd(), c21 = _mm512_setzero_pd();
  __m512d c30 = _mm512_setzero_pd(), c31 = _mm512_setzero_pd();
  __m512d c40 = _mm512_setzero_pd(), c41 = _mm512_setzero_pd();
  __m512d c50 = _mm512_setzero_pd(), c51 = _mm512_setzero_pd();
  __m512d c60 = _mm512_setzero_pd(), c61 = _mm512_setzero_pd();
  __m512d c70 = _mm512_setzero_pd(), c71 = _mm512_setzero_pd();
  for (int p = 0; p < kc; ++p) {
    __m512d b0 = _mm512_loadu_pd(bp);
    __m512d b1 = _mm512_loadu_pd(bp + 8);
    __m512d a0 = _mm512_set1_pd(ap[0]);
    __m512d a1 = _mm512_set1_pd(ap[1]);
    c00 = _mm512_fmadd_pd(a0, b0, c00);
    c01 = _mm512_fmadd_pd(a0, b1, c01);
    c10 = _mm512_fmadd_pd(a1, b0, c10);
    c11 = _mm512_fmadd_pd(a1, b1, c11);
    __m512d a2 = _mm512_set1_pd(ap[2]);
    __m512d a3 = _mm512_set1_pd(ap[3]);
    c20 = _mm512_fmadd_pd(a2, b0, c20);
    c21 = _mm512_fmadd_pd(a2, b1, c21);
    c30 = _mm512_fmadd_pd(a3, b0, c30);
    c31 = _mm512_fmadd_pd(a3, b1, c31);
    __m512d a4 = _mm512_set1_pd(ap[4]);
    __m512d a5 = _mm512_set1_pd(ap[5]);
    c40 = _mm512_fmadd_pd(a4, b0, c40);
    c41 = _mm512_fmadd_pd(a4, b1, c41);
    c50 = _mm512_fmadd_pd(a5, b0, c50);
    c51 = _mm512_fmadd_pd(a5, b1, c51);
    __m512d a6 = _mm512_set1_pd(ap[6]);
    __m512d a7 = _mm512_set1_pd(ap[7]);
    c60 = _mm512_fmadd_pd(a6, b0, c60);
    c61 = _mm512_fmadd_pd(a6, b1, c61);
    c70 = _mm512_fmadd_pd(a7, b0, c70);
    c71 = _mm512_fmadd_pd(a7, b1, c71);
    ap += MR;
    bp += NR;
  }
  _mm512_storeu_pd(acc + 0 * NR + 0, c00);
  _mm512_storeu_pd(acc + 0 * NR + 8, c01);
  _mm512_storeu_pd(acc + 1 * NR + 0, c10);
  _mm512_storeu_pd(acc + 1 * NR + 8, c11);
  _mm512_storeu_pd(acc + 2 * NR + 0, c20);
  _mm512_storeu_pd(acc + 2 * NR + 8, c21);
  _mm512_storeu_pd(acc + 3 * NR + 0, c30);
  _mm512_storeu_pd(acc + 3 * NR + 8, c31);
  _mm512_storeu_pd(acc + 4 * NR + 0, c40);
  _mm512_storeu_pd(acc + 4 * NR + 8, c41);
  _mm512_storeu_pd(acc + 5 * NR + 0, c50);
  _mm512_storeu_pd(acc + 5 * NR + 8, c51);
  _mm512_storeu_pd(acc + 6 * NR + 0, c60);
  _mm512_storeu_pd(acc + 6 * NR + 8, c61);
  _mm512_storeu_pd(acc + 7 * NR + 0, c70);
  _mm512_storeu_pd(acc + 7 * NR + 8, c71);
}

thread_local std::vector<double> g_abuf;
thread_local std::vector<double> g_bbuf;

void gemm_avx512(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                 const double* a, int lda, const double* b, int ldb,
                 double beta, double* c, int ldc) {
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
  alignas(64) double acc[MR * NR];

  for (int jc = 0; jc < n; jc += NC) {
    int nc = std::min(NC, n - jc);
    int nc_strips = (nc + NR - 1) / NR;
    for (int pc = 0; pc < k; pc += KC) {
      int kc = std::min(KC, k - pc);
      pack_b512(trans_b, b, ldb, pc, jc, kc, nc, g_bbuf.data());
      for (int ic = 0; ic < m; ic += MC) {
        int mc = std::min(MC, m - ic);
        int mc_strips = (mc + MR - 1) / MR;
        pack_a512(trans_a, a, lda, ic, pc, mc, kc, alpha, g_abuf.data());
        for (int js = 0; js < nc_strips; ++js) {
          const double* bp = g_bbuf.data() + static_cast<size_t>(js) * kc * NR;
          int jb = std::min(NR, nc - js * NR);
          for (int is = 0; is < mc_strips; ++is) {
            const double* ap = g_abuf.data() + static_cast<size_t>(is) * kc * MR;
            int ib = std::min(MR, mc - is * MR);
            kern_8x16(kc, ap, bp, acc);
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

Ops make_avx512_ops() {
  Ops o = detail::avx2_ops;
  o.gemm = gemm_avx512;
  return o;
}

}  // namespace

namespace detail {
const Ops avx512_ops = make_avx512_ops();
}  // namespace detail

}  // namespace freqdiff::kernels
