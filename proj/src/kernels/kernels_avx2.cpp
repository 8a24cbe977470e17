// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.

#include <immintrin.h>

#include <cmath>

#include "modelforge/kernels.hpp"

namespace modelforge::kernels::avx2 {

namespace {

inline float horizontal_sum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 shuf = _mm_movehdup_ps(lo);
  __m128 sums = _mm_add_ps(lo, shuf);
  shuf = _mm_movehl_ps(shuf, sums);
  sums = _mm_add_ss(sums, shuf);
  return _mm_cvtss_f32(sums);
}

template <typename Op, typename Tail>
inline void binary(const float* a, const float* b, float* out, std::size_t n, Op op, Tail tail) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(out + i, op(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  }
  for (; i < n; ++i) out[i] = tail(a[i], b[i]);
}

}  // namespace

float dot(const float* a, const float* b, std::size_t n) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
  }
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
  }
  float acc = horizontal_sum(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void add(const float* a, const float* b, float* out, std::size_t n) {
  binary(a, b, out, n, [](__m256 x, __m256 y) { return _mm256_add_ps(x, y); },
         [](float x, float y) { return x + y; });
}

void sub(const float* a, const float* b, float* out, std::size_t n) {
  binary(a, b, out, n, [](__m256 x, __m256 y) { return _mm256_sub_ps(x, y); },
         [](float x, float y) { return x - y; });
}

void mul(const float* a, const float* b, float* out, std::size_t n) {
  binary(a, b, out, n, [](__m256 x, __m256 y) { return _mm256_mul_ps(x, y); },
         [](float x, float y) { return x * y; });
}

// _mm256_max_ps returns the second operand when either is NaN, so NaN lanes
// are patched up with a blend to keep scalar semantics.
void max(const float* a, const float* b, float* out, std::size_t n) {
  binary(
      a, b, out, n,
      [](__m256 x, __m256 y) {
        __m256 m = _mm256_max_ps(x, y);
        __m256 y_nan = _mm256_cmp_ps(y, y, _CMP_UNORD_Q);
        m = _mm256_blendv_ps(m, y, y_nan);
        __m256 x_nan = _mm256_cmp_ps(x, x, _CMP_UNORD_Q);
        return _mm256_blendv_ps(m, x, x_nan);
      },
      [](float x, float y) {
        if (std::isnan(x) || std::isnan(y)) return std::isnan(x) ? x : y;
        return x > y ? x : y;
      });
}

void scale(const float* a, float by, float* out, std::size_t n) {
  const __m256 s = _mm256_set1_ps(by);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), s));
  for (; i < n; ++i) out[i] = a[i] * by;
}

}  // namespace modelforge::kernels::avx2
