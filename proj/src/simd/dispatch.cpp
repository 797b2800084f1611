#include <cstdlib>
#include <string_view>

#include "kernels_impl.hpp"
#include "somfuse/simd/kernels.hpp"

namespace somfuse::simd {

std::string_view to_string(Isa isa) noexcept {
  return isa == Isa::Avx2 ? "avx2" : "scalar";
}

const Kernels& scalar_kernels() noexcept {
  static const Kernels table{Isa::Scalar,           scalar::squared_distances,
                             scalar::pull_toward,   scalar::accumulate,
                             scalar::student_t_sum, scalar::tsne_gradient_sum};
  return table;
}

const Kernels* avx2_kernels() noexcept {
#if defined(SOMFUSE_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  static const Kernels table{Isa::Avx2,           avx2::squared_distances,
                             avx2::pull_toward,   avx2::accumulate,
                             avx2::student_t_sum, avx2::tsne_gradient_sum};
  static const bool supported = __builtin_cpu_supports("avx2");
  return supported ? &table : nullptr;
#else
  return nullptr;
#endif
}

namespace {

const Kernels& select() noexcept {
  const char* env = std::getenv("SOMFUSE_SIMD");
  const std::string_view request = env != nullptr ? env : "";
  if (request == "scalar") return scalar_kernels();
  if (const Kernels* k = avx2_kernels()) return *k;
  return scalar_kernels();
}

}  // namespace

const Kernels& active_kernels() noexcept {
  static const Kernels& chosen = select();
  return chosen;
}

}  // namespace somfuse::simd
