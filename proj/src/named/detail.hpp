#pragma once

#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "modelforge/named_array.hpp"

namespace modelforge::detail {

inline std::int64_t product(std::span<const std::int64_t> sizes) {
  return std::accumulate(sizes.begin(), sizes.end(), std::int64_t{1}, std::multiplies<>());
}

// Row-major walk over `sizes`, reading src at base + sum(idx[d] * strides[d]).
// A zero stride broadcasts.
template <typename T>
void strided_gather(const T* src, std::span<const std::int64_t> sizes,
                    std::span<const std::int64_t> strides, std::int64_t base, T* out) {
  const std::int64_t total = product(sizes);
  if (total == 0) return;
  const std::size_t r = sizes.size();
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t off = base;
  for (std::int64_t n = 0; n < total; ++n) {
    out[n] = src[off];
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < sizes[d]) {
        off += strides[d];
        break;
      }
      off -= strides[d] * (sizes[d] - 1);
      idx[d] = 0;
    }
  }
}

// Gathers `a` into a new array with the given sizes/strides and shapes.
inline NamedArray gather(const NamedArray& a, std::span<const std::int64_t> sizes,
                         std::span<const std::int64_t> strides, std::int64_t base,
                         NamedShape named, Shape positional) {
  const std::int64_t total = product(sizes);
  if (a.is_float()) {
    std::vector<float> out(static_cast<std::size_t>(total));
    strided_gather(a.float_data().data(), sizes, strides, base, out.data());
    return NamedArray::floats(std::move(named), std::move(positional), std::move(out));
  }
  std::vector<std::int32_t> out(static_cast<std::size_t>(total));
  strided_gather(a.int_data().data(), sizes, strides, base, out.data());
  return NamedArray::ints(std::move(named), std::move(positional), std::move(out), a.dtype());
}

}  // namespace modelforge::detail
