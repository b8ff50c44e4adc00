#include <cstdlib>
#include <cstring>

#include "freqdiff/common.hpp"
#include "freqdiff/kernels.hpp"

namespace freqdiff::kernels {
namespace {

Isa detect() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  if (__builtin_cpu_supports("avx512f") && __builtin_cpu_supports("avx512dq") &&
      __builtin_cpu_supports("avx512vl"))
    return Isa::avx512;
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma"))
    return Isa::avx2;
#endif
  return Isa::scalar;
}

Isa resolve() {
  Isa best = detect();
  const char* env = std::getenv("FREQDIFF_ISA");
  if (env == nullptr || std::strcmp(env, "auto") == 0) return best;
  Isa want;
  if (std::strcmp(env, "scalar") == 0)
    want = Isa::scalar;
  else if (std::strcmp(env, "avx2") == 0)
    want = Isa::avx2;
  else if (std::strcmp(env, "avx512") == 0)
    want = Isa::avx512;
  else
    throw invalid_input(std::string("unknown FREQDIFF_ISA value: ") + env);
  if (static_cast<int>(want) > static_cast<int>(best))
    throw invalid_input(std::string("FREQDIFF_ISA=") + env +
                        " not supported by this CPU");
  return want;
}

}  // namespace

const char* isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
    case Isa::avx512: return "avx512";
  }
  return "?";
}

bool isa_supported(Isa isa) {
  return static_cast<int>(isa) <= static_cast<int>(detect());
}

Isa active_isa() {
  static const Isa isa = resolve();
  return isa;
}

const Ops& ops_for(Isa isa) {
  switch (isa) {
    case Isa::avx512: return detail::avx512_ops;
    case Isa::avx2: return detail::avx2_ops;
    default: return detail::scalar_ops;
  }
}

const Ops& ops() { return ops_for(active_isa()); }

}  // namespace freqdiff::kernels
