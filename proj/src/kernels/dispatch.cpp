#include <atomic>
#include <cstdlib>
#include <string>

#include "modelforge/kernels.hpp"

namespace modelforge::kernels {

namespace {

const KernelTable kScalar{Isa::kScalar, scalar::dot, scalar::add, scalar::sub,
                          scalar::mul,  scalar::max, scalar::scale};

#if defined(MODELFORGE_WITH_AVX2)
const KernelTable kAvx2{Isa::kAvx2, avx2::dot, avx2::add, avx2::sub,
                        avx2::mul,  avx2::max, avx2::scale};
#endif

const KernelTable* detect() {
  const char* env = std::getenv("MODELFORGE_KERNELS");
  std::string choice = env ? env : "auto";
  if (choice == "scalar") return &kScalar;
  const KernelTable* simd = avx2_table();
  if (simd != nullptr) return simd;
  return &kScalar;
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> table{detect()};
  return table;
}

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

const KernelTable* avx2_table() {
#if defined(MODELFORGE_WITH_AVX2)
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? &kAvx2 : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active() { return *slot().load(std::memory_order_acquire); }

const KernelTable& set_active(const KernelTable& table) {
  return *slot().exchange(&table, std::memory_order_acq_rel);
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
  }
  return "unknown";
}

}  // namespace modelforge::kernels
