#pragma once

// Dense arrays whose axes carry either a name or a position, never both.
//
// Storage order is canonical: named axes sorted lexicographically by name
// come first (outermost), followed by the positional axes in order. Two arrays
// with the same named and positional shapes therefore always share a buffer
// layout, regardless of how they were produced.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace modelforge {

enum class DType { kFloat32, kInt32, kBool };

std::string_view dtype_name(DType dtype);
std::optional<DType> parse_dtype(std::string_view name);

using NamedShape = std::map<std::string, std::int64_t, std::less<>>;
using Shape = std::vector<std::int64_t>;
using AxisNames = std::vector<std::string>;

// One axis of an array: either named or positional (zero-based).
struct AxisSpec {
  std::variant<std::string, std::size_t> id;

  static AxisSpec named(std::string name) { return AxisSpec{std::move(name)}; }
  static AxisSpec positional(std::size_t index) { return AxisSpec{index}; }
  bool is_named() const { return std::holds_alternative<std::string>(id); }
  const std::string& name() const { return std::get<std::string>(id); }
  std::size_t position() const { return std::get<std::size_t>(id); }
  std::string to_string() const;
  friend bool operator==(const AxisSpec&, const AxisSpec&) = default;
};

struct LayoutAxis {
  AxisSpec axis;
  std::int64_t size;
  std::int64_t stride;
};

class NamedArray {
 public:
  // A float32 scalar zero.
  NamedArray();

  static NamedArray floats(NamedShape named, Shape positional, std::vector<float> data);
  static NamedArray ints(NamedShape named, Shape positional, std::vector<std::int32_t> data,
                         DType dtype = DType::kInt32);
  static NamedArray scalar(float value);
  static NamedArray scalar_int(std::int32_t value);
  static NamedArray zeros(NamedShape named, Shape positional = {}, DType dtype = DType::kFloat32);
  static NamedArray full(NamedShape named, float value);
  // int32 array {name: n} holding 0..n-1.
  static NamedArray arange(const std::string& name, std::int64_t n);

  DType dtype() const { return dtype_; }
  bool is_float() const { return dtype_ == DType::kFloat32; }
  const NamedShape& named_shape() const { return named_; }
  const Shape& positional_shape() const { return positional_; }
  std::size_t rank() const { return named_.size() + positional_.size(); }
  std::int64_t size() const;
  bool has_axis(std::string_view name) const { return named_.find(name) != named_.end(); }
  std::int64_t axis_size(std::string_view name) const;
  AxisNames axis_names() const;

  // Axes in storage order with row-major strides.
  std::vector<LayoutAxis> layout() const;
  std::int64_t stride_of(std::string_view name) const;

  std::span<const float> float_data() const;
  std::span<const std::int32_t> int_data() const;
  // Element at a flat storage offset, converted to float.
  float value_at(std::int64_t flat) const;
  float value_at(const std::map<std::string, std::int64_t, std::less<>>& named_index,
                 const Shape& positional_index = {}) const;

  // Listed named axes become the leading positional axes, in the given order.
  NamedArray untag(std::span<const std::string> names) const;
  NamedArray untag(std::initializer_list<std::string> names) const {
    return untag(std::span<const std::string>(names.begin(), names.size()));
  }
  // Binds every positional axis, leading to trailing, to the given names.
  NamedArray tag(std::span<const std::string> names) const;
  NamedArray tag(std::initializer_list<std::string> names) const {
    return tag(std::span<const std::string>(names.begin(), names.size()));
  }

  std::string shape_string() const;

 private:
  DType dtype_ = DType::kFloat32;
  NamedShape named_;
  Shape positional_;
  std::shared_ptr<const std::vector<float>> floats_;
  std::shared_ptr<const std::vector<std::int32_t>> ints_;
};

// Same dtype, shapes, and bit patterns.
bool bitwise_equal(const NamedArray& a, const NamedArray& b);

namespace nx {

using PositionalFn = std::function<NamedArray(std::span<const NamedArray>)>;

// Lifts a positional-only function over the union of named axes in `args`.
// Result named axes are the union (canonical order); positional axes are those
// of `f`'s output, which must agree across every invocation.
NamedArray nmap(const PositionalFn& f, std::span<const NamedArray> args);
NamedArray nmap(const PositionalFn& f, std::initializer_list<NamedArray> args);

enum class BinaryOp { kAdd, kMul, kSub, kMax };

// Broadcasts by axis-name union. Positional shapes must match or one side must
// have none.
NamedArray elementwise(BinaryOp op, const NamedArray& a, const NamedArray& b);
inline NamedArray add(const NamedArray& a, const NamedArray& b) { return elementwise(BinaryOp::kAdd, a, b); }
inline NamedArray mul(const NamedArray& a, const NamedArray& b) { return elementwise(BinaryOp::kMul, a, b); }
inline NamedArray sub(const NamedArray& a, const NamedArray& b) { return elementwise(BinaryOp::kSub, a, b); }
inline NamedArray maximum(const NamedArray& a, const NamedArray& b) { return elementwise(BinaryOp::kMax, a, b); }

NamedArray scale(const NamedArray& a, float by);
NamedArray map(const NamedArray& a, const std::function<float(float)>& fn);
NamedArray zeros_like(const NamedArray& a);

// Sums the elementwise product over `names`. Shared names that are not
// contracted act as batch axes. Both operands must be float32 and fully named.
NamedArray contract(std::span<const std::string> names, const NamedArray& a, const NamedArray& b);
inline NamedArray contract(std::initializer_list<std::string> names, const NamedArray& a,
                           const NamedArray& b) {
  return contract(std::span<const std::string>(names.begin(), names.size()), a, b);
}

enum class ReduceOp { kSum, kMax, kMean };
NamedArray reduce(ReduceOp op, const NamedArray& a, std::string_view name);

struct ArrayStats {
  std::int64_t total_count = 0;
  std::int64_t count_zero = 0;
  std::int64_t count_nonfinite = 0;
  // Over finite elements only, computed with reduce over the flattened
  // values; std is sqrt(mean((v - mean)^2)) in float32.
  double mean = 0.0;
  double std = 0.0;
  double min = 0.0;
  double max = 0.0;
};
// Throws AxisError for an empty array.
ArrayStats stats(const NamedArray& a);

// Max-subtracted softmax over the flattened product of `axes`.
NamedArray softmax(const NamedArray& a, std::span<const std::string> axes);

// Calls fn(in, out) on each contiguous block spanned by `axes` (in the given
// order, innermost last) for every assignment of the other axes.
NamedArray apply_over_axes(const NamedArray& a, std::span<const std::string> axes,
                           const std::function<void(std::span<const float>, std::span<float>)>& fn);

NamedArray rename(const NamedArray& a, std::string_view from, const std::string& to);
// Drops axis `name`, keeping index `index`.
NamedArray slice(const NamedArray& a, std::string_view name, std::int64_t index);
// Copy of `a` with the slice at `index` along `name` replaced by `value`
// (which lacks `name` and broadcasts to the remaining axes).
NamedArray set_slice(const NamedArray& a, std::string_view name, std::int64_t index,
                     const NamedArray& value);
// Writes `values` (which carries `name` with a smaller size) into `a` starting
// at `offset` along `name`.
NamedArray update_range(const NamedArray& a, std::string_view name, std::int64_t offset,
                        const NamedArray& values);
// Adds (or checks) named axes so `a` has every axis in `target`.
NamedArray broadcast_to(const NamedArray& a, const NamedShape& target);
NamedArray stack(std::span<const NamedArray> parts, const std::string& name);
NamedArray to_float(const NamedArray& a);

float max_abs_diff(const NamedArray& a, const NamedArray& b);

}  // namespace nx
}  // namespace modelforge
