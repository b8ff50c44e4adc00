// Throughput probe for the gemm kernels at the shapes the training loop
// actually hits. Prints GFLOP/s per ISA so perf regressions are visible.

#include <chrono>
#include <cstdio>
#include <random>
#include <vector>

#include "freqdiff/kernels.hpp"

using namespace freqdiff::kernels;

static double bench(const Ops& o, int m, int n, int k, double seconds) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> a(static_cast<size_t>(m) * k), b(static_cast<size_t>(k) * n),
      c(static_cast<size_t>(m) * n, 0.0);
  for (auto& x : a) x = u(rng);
  for (auto& x : b) x = u(rng);
  // warm up
  o.gemm(false, false, m, n, k, 1.0, a.data(), k, b.data(), n, 0.0, c.data(), n);
  auto t0 = std::chrono::steady_clock::now();
  long iters = 0;
  double elapsed = 0.0;
  while (elapsed < seconds) {
    o.gemm(false, false, m, n, k, 1.0, a.data(), k, b.data(), n, 0.0, c.data(), n);
    ++iters;
    elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  double flops = 2.0 * m * n * k * iters;
  return flops / elapsed / 1e9;
}

int main() {
  struct Shape { int m, n, k; const char* why; };
  Shape shapes[] = {
      {64, 2048, 192, "conv3 fwd (chunk 32)"},
      {64, 2048, 64, "conv1 fwd"},
      {64, 192, 2048, "conv3 dW"},
      {2048, 256, 64, "dim temporal fwd"},
      {2048, 128, 512, "dim channel 2nd"},
      {512, 512, 512, "square ref"},
  };
  Isa isas[] = {Isa::scalar, Isa::avx2, Isa::avx512};
  for (Isa isa : isas) {
    if (!isa_supported(isa)) {
      std::printf("%-7s unsupported on this cpu\n", isa_name(isa));
      continue;
    }
    const Ops& o = ops_for(isa);
    std::printf("%-7s", isa_name(isa));
    for (const Shape& s : shapes) {
      double gf = bench(o, s.m, s.n, s.k, isa == Isa::scalar ? 0.2 : 0.5);
      std::printf("  %7.2f", gf);
    }
    std::printf("\n");
  }
  std::printf("shapes:");
  for (const Shape& s : shapes) std::printf("  [%dx%dx%d %s]", s.m, s.n, s.k, s.why);
  std::printf("\nactive isa: %s\n", isa_name(active_isa()));
  return 0;
}
