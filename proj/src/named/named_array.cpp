#include "modelforge/named_array.hpp"

#include <algorithm>
#include <bit>
#include <set>
#include <sstream>

#include "modelforge/error.hpp"
#include "named/detail.hpp"

namespace modelforge {

std::string_view dtype_name(DType dtype) {
  switch (dtype) {
    case DType::kFloat32:
      return "float32";
    case DType::kInt32:
      return "int32";
    case DType::kBool:
      return "bool";
  }
  return "unknown";
}

std::optional<DType> parse_dtype(std::string_view name) {
  if (name == "float32") return DType::kFloat32;
  if (name == "int32") return DType::kInt32;
  if (name == "bool") return DType::kBool;
  return std::nullopt;
}

std::string AxisSpec::to_string() const {
  if (is_named()) return name();
  return "#" + std::to_string(position());
}

namespace {

void check_shape(const NamedShape& named, const Shape& positional, std::size_t data_size) {
  std::int64_t total = 1;
  for (const auto& [name, size] : named) {
    if (name.empty()) throw AxisError("axis names must be non-empty");
    if (size < 0) throw AxisError("axis '" + name + "' has negative size");
    total *= size;
  }
  for (std::int64_t size : positional) {
    if (size < 0) throw AxisError("positional axis has negative size");
    total *= size;
  }
  if (static_cast<std::size_t>(total) != data_size) {
    throw AxisError("element count " + std::to_string(data_size) + " does not match shape product " +
                    std::to_string(total));
  }
}

}  // namespace

NamedArray::NamedArray() : floats_(std::make_shared<const std::vector<float>>(1, 0.0f)) {}

NamedArray NamedArray::floats(NamedShape named, Shape positional, std::vector<float> data) {
  check_shape(named, positional, data.size());
  NamedArray out;
  out.dtype_ = DType::kFloat32;
  out.named_ = std::move(named);
  out.positional_ = std::move(positional);
  out.floats_ = std::make_shared<const std::vector<float>>(std::move(data));
  return out;
}

NamedArray NamedArray::ints(NamedShape named, Shape positional, std::vector<std::int32_t> data,
                            DType dtype) {
  if (dtype == DType::kFloat32) throw AxisError("ints() requires an integer dtype");
  check_shape(named, positional, data.size());
  if (dtype == DType::kBool) {
    for (auto& v : data) v = v != 0 ? 1 : 0;
  }
  NamedArray out;
  out.dtype_ = dtype;
  out.named_ = std::move(named);
  out.positional_ = std::move(positional);
  out.floats_.reset();
  out.ints_ = std::make_shared<const std::vector<std::int32_t>>(std::move(data));
  return out;
}

NamedArray NamedArray::scalar(float value) { return floats({}, {}, {value}); }

NamedArray NamedArray::scalar_int(std::int32_t value) { return ints({}, {}, {value}); }

NamedArray NamedArray::zeros(NamedShape named, Shape positional, DType dtype) {
  std::int64_t total = 1;
  for (const auto& [_, size] : named) total *= size;
  for (std::int64_t size : positional) total *= size;
  if (dtype == DType::kFloat32) {
    return floats(std::move(named), std::move(positional),
                  std::vector<float>(static_cast<std::size_t>(total), 0.0f));
  }
  return ints(std::move(named), std::move(positional),
              std::vector<std::int32_t>(static_cast<std::size_t>(total), 0), dtype);
}

NamedArray NamedArray::full(NamedShape named, float value) {
  std::int64_t total = 1;
  for (const auto& [_, size] : named) total *= size;
  return floats(std::move(named), {}, std::vector<float>(static_cast<std::size_t>(total), value));
}

NamedArray NamedArray::arange(const std::string& name, std::int64_t n) {
  std::vector<std::int32_t> data(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) data[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(i);
  return ints({{name, n}}, {}, std::move(data));
}

std::int64_t NamedArray::size() const {
  return is_float() ? static_cast<std::int64_t>(floats_->size())
                    : static_cast<std::int64_t>(ints_->size());
}

std::int64_t NamedArray::axis_size(std::string_view name) const {
  auto it = named_.find(name);
  if (it == named_.end()) throw AxisError("unknown axis name '" + std::string(name) + "'");
  return it->second;
}

AxisNames NamedArray::axis_names() const {
  AxisNames out;
  for (const auto& [name, _] : named_) out.push_back(name);
  return out;
}

std::vector<LayoutAxis> NamedArray::layout() const {
  std::vector<LayoutAxis> out;
  out.reserve(rank());
  for (const auto& [name, size] : named_) out.push_back({AxisSpec::named(name), size, 0});
  for (std::size_t i = 0; i < positional_.size(); ++i) {
    out.push_back({AxisSpec::positional(i), positional_[i], 0});
  }
  std::int64_t stride = 1;
  for (std::size_t d = out.size(); d-- > 0;) {
    out[d].stride = stride;
    stride *= out[d].size;
  }
  return out;
}

std::int64_t NamedArray::stride_of(std::string_view name) const {
  for (const auto& axis : layout()) {
    if (axis.axis.is_named() && axis.axis.name() == name) return axis.stride;
  }
  throw AxisError("unknown axis name '" + std::string(name) + "'");
}

std::span<const float> NamedArray::float_data() const {
  if (!is_float()) throw AxisError("array has dtype " + std::string(dtype_name(dtype_)) + ", expected float32");
  return {floats_->data(), floats_->size()};
}

std::span<const std::int32_t> NamedArray::int_data() const {
  if (is_float()) throw AxisError("array has dtype float32, expected an integer dtype");
  return {ints_->data(), ints_->size()};
}

float NamedArray::value_at(std::int64_t flat) const {
  if (is_float()) return (*floats_)[static_cast<std::size_t>(flat)];
  return static_cast<float>((*ints_)[static_cast<std::size_t>(flat)]);
}

float NamedArray::value_at(const std::map<std::string, std::int64_t, std::less<>>& named_index,
                           const Shape& positional_index) const {
  if (named_index.size() != named_.size() || positional_index.size() != positional_.size()) {
    throw AxisError("index does not cover every axis of " + shape_string());
  }
  std::int64_t flat = 0;
  for (const auto& axis : layout()) {
    std::int64_t i = 0;
    if (axis.axis.is_named()) {
      auto it = named_index.find(axis.axis.name());
      if (it == named_index.end()) throw AxisError("index is missing axis '" + axis.axis.name() + "'");
      i = it->second;
    } else {
      i = positional_index[axis.axis.position()];
    }
    if (i < 0 || i >= axis.size) throw AxisError("index out of range on axis " + axis.axis.to_string());
    flat += i * axis.stride;
  }
  return value_at(flat);
}

NamedArray NamedArray::untag(std::span<const std::string> names) const {
  std::set<std::string, std::less<>> seen;
  for (const auto& name : names) {
    if (!seen.insert(name).second) throw AxisError("duplicate axis name '" + name + "' in untag");
    if (!has_axis(name)) throw AxisError("untag of unknown axis name '" + name + "'");
  }
  if (names.empty()) return *this;

  const auto axes = layout();
  std::vector<std::int64_t> sizes;
  std::vector<std::int64_t> strides;
  NamedShape out_named;
  for (const auto& axis : axes) {
    if (axis.axis.is_named() && !seen.contains(axis.axis.name())) {
      sizes.push_back(axis.size);
      strides.push_back(axis.stride);
      out_named.emplace(axis.axis.name(), axis.size);
    }
  }
  Shape out_positional;
  for (const auto& name : names) {
    out_positional.push_back(named_.find(name)->second);
    sizes.push_back(out_positional.back());
    strides.push_back(stride_of(name));
  }
  for (const auto& axis : axes) {
    if (!axis.axis.is_named()) {
      out_positional.push_back(axis.size);
      sizes.push_back(axis.size);
      strides.push_back(axis.stride);
    }
  }
  return detail::gather(*this, sizes, strides, 0, std::move(out_named), std::move(out_positional));
}

NamedArray NamedArray::tag(std::span<const std::string> names) const {
  if (names.size() != positional_.size()) {
    throw AxisError("tag expects " + std::to_string(positional_.size()) + " names for " +
                    shape_string() + ", got " + std::to_string(names.size()));
  }
  std::set<std::string, std::less<>> seen;
  for (const auto& name : names) {
    if (name.empty()) throw AxisError("axis names must be non-empty");
    if (!seen.insert(name).second) throw AxisError("duplicate axis name '" + name + "' in tag");
    if (has_axis(name)) throw AxisError("tag name '" + name + "' collides with an existing named axis");
  }
  if (names.empty()) return *this;

  const auto axes = layout();
  std::map<std::string, std::pair<std::int64_t, std::int64_t>, std::less<>> source;  // size, stride
  for (const auto& axis : axes) {
    const std::string key = axis.axis.is_named() ? axis.axis.name() : names[axis.axis.position()];
    source.emplace(key, std::make_pair(axis.size, axis.stride));
  }
  std::vector<std::int64_t> sizes;
  std::vector<std::int64_t> strides;
  NamedShape out_named;
  for (const auto& [name, size_stride] : source) {
    sizes.push_back(size_stride.first);
    strides.push_back(size_stride.second);
    out_named.emplace(name, size_stride.first);
  }
  return detail::gather(*this, sizes, strides, 0, std::move(out_named), {});
}

std::string NamedArray::shape_string() const {
  std::ostringstream os;
  os << dtype_name(dtype_) << "[";
  bool first = true;
  for (const auto& [name, size] : named_) {
    os << (first ? "" : ", ") << name << ":" << size;
    first = false;
  }
  for (std::int64_t size : positional_) {
    os << (first ? "" : ", ") << size;
    first = false;
  }
  os << "]";
  return os.str();
}

bool bitwise_equal(const NamedArray& a, const NamedArray& b) {
  if (a.dtype() != b.dtype() || a.named_shape() != b.named_shape() ||
      a.positional_shape() != b.positional_shape()) {
    return false;
  }
  if (a.is_float()) {
    auto x = a.float_data();
    auto y = b.float_data();
    return std::equal(x.begin(), x.end(), y.begin(), y.end(), [](float p, float q) {
      return std::bit_cast<std::uint32_t>(p) == std::bit_cast<std::uint32_t>(q);
    });
  }
  auto x = a.int_data();
  auto y = b.int_data();
  return std::equal(x.begin(), x.end(), y.begin(), y.end());
}

}  // namespace modelforge
