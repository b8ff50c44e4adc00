#pragma once

#include <cstddef>

namespace freqdiff::kernels {

enum class Isa { scalar = 0, avx2 = 1, avx512 = 2 };

// Hot numeric primitives behind one dispatch table. Every entry has a scalar
// reference implementation; wider ISAs must agree with it to tight tolerance
// (exact for branch/polynomial-free ops, ~1e-13 relative where exp is involved).
// Backward kernels accumulate (dx += ...), matching gradient summation.
struct Ops {
  // c[m x n] = alpha * op(a) op(b) + beta * c, row-major, explicit leading dims.
  void (*gemm)(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
               const double* a, int lda, const double* b, int ldb, double beta,
               double* c, int ldc);

  void (*add)(const double* x, const double* y, double* out, std::size_t n);
  void (*sub)(const double* x, const double* y, double* out, std::size_t n);
  void (*mul)(const double* x, const double* y, double* out, std::size_t n);
  void (*axpy)(double a, const double* x, double* y, std::size_t n);  // y += a*x
  void (*scale)(double a, double* x, std::size_t n);
  double (*dot)(const double* x, const double* y, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
  double (*sumsq)(const double* x, std::size_t n);

  void (*vexp)(const double* x, double* out, std::size_t n);
  void (*relu)(const double* x, double* out, std::size_t n);
  void (*relu_bwd)(const double* x, const double* dy, double* dx, std::size_t n);
  void (*sigmoid)(const double* x, double* out, std::size_t n);
  void (*silu)(const double* x, double* out, std::size_t n);
  void (*silu_bwd)(const double* x, const double* dy, double* dx, std::size_t n);
  void (*tanh_)(const double* x, double* out, std::size_t n);
  void (*tanh_bwd)(const double* x, const double* dy, double* dx, std::size_t n);
  void (*gelu)(const double* x, double* out, std::size_t n);
  void (*gelu_bwd)(const double* x, const double* dy, double* dx, std::size_t n);

  // Bias-corrected Adam update; decay != 0 selects the decoupled (AdamW) form.
  void (*adam_step)(double* p, const double* g, double* m, double* v,
                    std::size_t n, double lr, double beta1, double beta2,
                    double eps, double decay, long step);
};

const char* isa_name(Isa isa);
bool isa_supported(Isa isa);

// Best ISA the CPU supports, overridable via FREQDIFF_ISA=scalar|avx2|avx512.
// Resolved once on first use and stable for the life of the process.
Isa active_isa();
const Ops& ops();
const Ops& ops_for(Isa isa);  // tests compare implementations directly

namespace detail {
extern const Ops scalar_ops;
extern const Ops avx2_ops;
extern const Ops avx512_ops;
}  // namespace detail

}  // namespace freqdiff::kernels
