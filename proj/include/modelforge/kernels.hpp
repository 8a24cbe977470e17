#pragma once

// Contiguous float32 inner loops used by the named-array ops.
//
// Every kernel has a scalar reference implementation; an AVX2 variant is
// compiled when the toolchain supports it and picked at runtime. The
// MODELFORGE_KERNELS environment variable ("scalar", "avx2", "auto") forces a
// choice, which is how cross-machine byte-identical outputs are obtained.

#include <cstddef>
#include <string_view>

namespace modelforge::kernels {

enum class Isa { kScalar, kAvx2 };

struct KernelTable {
  Isa isa;
  float (*dot)(const float* a, const float* b, std::size_t n);
  void (*add)(const float* a, const float* b, float* out, std::size_t n);
  void (*sub)(const float* a, const float* b, float* out, std::size_t n);
  void (*mul)(const float* a, const float* b, float* out, std::size_t n);
  void (*max)(const float* a, const float* b, float* out, std::size_t n);
  void (*scale)(const float* a, float by, float* out, std::size_t n);
};

namespace scalar {
float dot(const float* a, const float* b, std::size_t n);
void add(const float* a, const float* b, float* out, std::size_t n);
void sub(const float* a, const float* b, float* out, std::size_t n);
void mul(const float* a, const float* b, float* out, std::size_t n);
void max(const float* a, const float* b, float* out, std::size_t n);
void scale(const float* a, float by, float* out, std::size_t n);
}  // namespace scalar

#if defined(MODELFORGE_WITH_AVX2)
namespace avx2 {
float dot(const float* a, const float* b, std::size_t n);
void add(const float* a, const float* b, float* out, std::size_t n);
void sub(const float* a, const float* b, float* out, std::size_t n);
void mul(const float* a, const float* b, float* out, std::size_t n);
void max(const float* a, const float* b, float* out, std::size_t n);
void scale(const float* a, float by, float* out, std::size_t n);
}  // namespace avx2
#endif

const KernelTable& scalar_table();
// nullptr when the variant is not compiled in or the CPU lacks it.
const KernelTable* avx2_table();

// The table selected for this process (env override, then CPU detection).
const KernelTable& active();

// Test hook; returns the previous selection.
const KernelTable& set_active(const KernelTable& table);

std::string_view isa_name(Isa isa);

}  // namespace modelforge::kernels
