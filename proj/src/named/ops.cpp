#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "modelforge/error.hpp"
#include "modelforge/kernels.hpp"
#include "modelforge/named_array.hpp"
#include "named/detail.hpp"

namespace modelforge::nx {

namespace {

NamedShape union_shape(std::span<const NamedArray> args) {
  NamedShape out;
  for (const auto& arg : args) {
    for (const auto& [name, size] : arg.named_shape()) {
      auto [it, inserted] = out.emplace(name, size);
      if (!inserted && it->second != size) {
        throw AxisError("named axis '" + name + "' has conflicting sizes " +
                        std::to_string(it->second) + " and " + std::to_string(size));
      }
    }
  }
  return out;
}

std::vector<std::int64_t> offsets_of(std::span<const std::int64_t> sizes,
                                     std::span<const std::int64_t> strides, std::int64_t base) {
  std::vector<std::int64_t> out(static_cast<std::size_t>(detail::product(sizes)));
  if (out.empty()) return out;
  std::vector<std::int64_t> idx(sizes.size(), 0);
  std::int64_t off = base;
  for (auto& slot : out) {
    slot = off;
    for (std::size_t d = sizes.size(); d-- > 0;) {
      if (++idx[d] < sizes[d]) {
        off += strides[d];
        break;
      }
      off -= strides[d] * (sizes[d] - 1);
      idx[d] = 0;
    }
  }
  return out;
}

// Copies the positional block of `a` at flat offset `offset`.
NamedArray positional_block(const NamedArray& a, std::int64_t offset) {
  const Shape& pos = a.positional_shape();
  const auto block = static_cast<std::size_t>(detail::product(pos));
  if (a.is_float()) {
    auto data = a.float_data().subspan(static_cast<std::size_t>(offset), block);
    return NamedArray::floats({}, pos, std::vector<float>(data.begin(), data.end()));
  }
  auto data = a.int_data().subspan(static_cast<std::size_t>(offset), block);
  return NamedArray::ints({}, pos, std::vector<std::int32_t>(data.begin(), data.end()), a.dtype());
}

// Gathers `a` so that its storage matches canonical order for `named` +
// `a`'s positional axes, broadcasting missing names.
NamedArray broadcast_layout(const NamedArray& a, const NamedShape& named, const Shape& positional) {
  if (a.named_shape() == named && a.positional_shape() == positional) return a;
  std::vector<std::int64_t> sizes;
  std::vector<std::int64_t> strides;
  for (const auto& [name, size] : named) {
    sizes.push_back(size);
    strides.push_back(a.has_axis(name) ? a.stride_of(name) : 0);
  }
  const auto layout = a.layout();
  const std::size_t first_pos = a.named_shape().size();
  for (std::size_t i = 0; i < positional.size(); ++i) {
    sizes.push_back(positional[i]);
    strides.push_back(a.positional_shape().empty() ? 0 : layout[first_pos + i].stride);
  }
  return detail::gather(a, sizes, strides, 0, named, positional);
}

// Reorders a buffer whose axes appear in `order` (with sizes) into the
// canonical layout of (named, positional).
NamedArray canonicalize(const NamedArray& flat_source, const std::vector<AxisSpec>& order,
                        const std::vector<std::int64_t>& order_sizes, NamedShape named,
                        Shape positional) {
  std::vector<std::int64_t> order_strides(order.size());
  std::int64_t stride = 1;
  for (std::size_t d = order.size(); d-- > 0;) {
    order_strides[d] = stride;
    stride *= order_sizes[d];
  }
  auto stride_for = [&](const AxisSpec& axis) {
    for (std::size_t d = 0; d < order.size(); ++d) {
      if (order[d] == axis) return order_strides[d];
    }
    throw AxisError("internal: axis " + axis.to_string() + " missing from order");
  };
  std::vector<std::int64_t> sizes;
  std::vector<std::int64_t> strides;
  for (const auto& [name, size] : named) {
    sizes.push_back(size);
    strides.push_back(stride_for(AxisSpec::named(name)));
  }
  for (std::size_t i = 0; i < positional.size(); ++i) {
    sizes.push_back(positional[i]);
    strides.push_back(stride_for(AxisSpec::positional(i)));
  }
  return detail::gather(flat_source, sizes, strides, 0, std::move(named), std::move(positional));
}

std::int32_t int_op(BinaryOp op, std::int32_t x, std::int32_t y) {
  switch (op) {
    case BinaryOp::kAdd:
      return x + y;
    case BinaryOp::kMul:
      return x * y;
    case BinaryOp::kSub:
      return x - y;
    case BinaryOp::kMax:
      return std::max(x, y);
  }
  return 0;
}

}  // namespace

NamedArray nmap(const PositionalFn& f, std::span<const NamedArray> args) {
  const NamedShape named = union_shape(args);
  std::vector<std::int64_t> sizes;
  for (const auto& [_, size] : named) sizes.push_back(size);
  std::vector<std::vector<std::int64_t>> offsets;
  for (const auto& arg : args) {
    std::vector<std::int64_t> strides;
    for (const auto& [name, _] : named) strides.push_back(arg.has_axis(name) ? arg.stride_of(name) : 0);
    offsets.push_back(offsets_of(sizes, strides, 0));
  }
  const std::int64_t total = detail::product(sizes);

  std::vector<NamedArray> slices(args.size());
  std::optional<Shape> out_positional;
  DType out_dtype = DType::kFloat32;
  std::vector<float> out_floats;
  std::vector<std::int32_t> out_ints;

  auto absorb = [&](const NamedArray& result) {
    if (!result.named_shape().empty()) {
      throw AxisError("nmap function returned named axes " + result.shape_string());
    }
    if (!out_positional) {
      out_positional = result.positional_shape();
      out_dtype = result.dtype();
    } else if (*out_positional != result.positional_shape() || out_dtype != result.dtype()) {
      throw AxisError("nmap function returned inconsistent shapes across named indices");
    }
    if (result.is_float()) {
      auto d = result.float_data();
      out_floats.insert(out_floats.end(), d.begin(), d.end());
    } else {
      auto d = result.int_data();
      out_ints.insert(out_ints.end(), d.begin(), d.end());
    }
  };

  if (total == 0) {
    // Probe the output shape with zero-filled slices.
    for (std::size_t i = 0; i < args.size(); ++i) {
      slices[i] = NamedArray::zeros({}, args[i].positional_shape(), args[i].dtype());
    }
    NamedArray probe = f(slices);
    out_positional = probe.positional_shape();
    out_dtype = probe.dtype();
  } else {
    for (std::int64_t n = 0; n < total; ++n) {
      for (std::size_t i = 0; i < args.size(); ++i) {
        slices[i] = positional_block(args[i], offsets[i][static_cast<std::size_t>(n)]);
      }
      absorb(f(slices));
    }
  }
  if (out_dtype == DType::kFloat32) {
    out_floats.resize(static_cast<std::size_t>(total * detail::product(*out_positional)));
    return NamedArray::floats(named, *out_positional, std::move(out_floats));
  }
  out_ints.resize(static_cast<std::size_t>(total * detail::product(*out_positional)));
  return NamedArray::ints(named, *out_positional, std::move(out_ints), out_dtype);
}

NamedArray nmap(const PositionalFn& f, std::initializer_list<NamedArray> args) {
  return nmap(f, std::span<const NamedArray>(args.begin(), args.size()));
}

NamedArray elementwise(BinaryOp op, const NamedArray& a, const NamedArray& b) {
  const NamedArray pair[] = {a, b};
  const NamedShape named = union_shape(pair);
  Shape positional;
  if (a.positional_shape() == b.positional_shape() || b.positional_shape().empty()) {
    positional = a.positional_shape();
  } else if (a.positional_shape().empty()) {
    positional = b.positional_shape();
  } else {
    throw AxisError("positional shapes differ: " + a.shape_string() + " vs " + b.shape_string());
  }

  if (a.is_float() || b.is_float()) {
    const NamedArray x = broadcast_layout(to_float(a), named, positional);
    const NamedArray y = broadcast_layout(to_float(b), named, positional);
    std::vector<float> out(static_cast<std::size_t>(x.size()));
    const auto& k = kernels::active();
    auto fn = op == BinaryOp::kAdd ? k.add : op == BinaryOp::kMul ? k.mul : op == BinaryOp::kSub ? k.sub : k.max;
    fn(x.float_data().data(), y.float_data().data(), out.data(), out.size());
    return NamedArray::floats(named, positional, std::move(out));
  }
  const NamedArray x = broadcast_layout(a, named, positional);
  const NamedArray y = broadcast_layout(b, named, positional);
  auto xd = x.int_data();
  auto yd = y.int_data();
  std::vector<std::int32_t> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = int_op(op, xd[i], yd[i]);
  const DType dtype = (a.dtype() == DType::kBool && b.dtype() == DType::kBool &&
                       (op == BinaryOp::kMul || op == BinaryOp::kMax))
                          ? DType::kBool
                          : DType::kInt32;
  return NamedArray::ints(named, positional, std::move(out), dtype);
}

NamedArray scale(const NamedArray& a, float by) {
  const NamedArray x = to_float(a);
  std::vector<float> out(static_cast<std::size_t>(x.size()));
  kernels::active().scale(x.float_data().data(), by, out.data(), out.size());
  return NamedArray::floats(x.named_shape(), x.positional_shape(), std::move(out));
}

NamedArray map(const NamedArray& a, const std::function<float(float)>& fn) {
  const NamedArray x = to_float(a);
  auto in = x.float_data();
  std::vector<float> out(in.size());
  std::transform(in.begin(), in.end(), out.begin(), fn);
  return NamedArray::floats(x.named_shape(), x.positional_shape(), std::move(out));
}

NamedArray zeros_like(const NamedArray& a) {
  return NamedArray::zeros(a.named_shape(), a.positional_shape(), a.dtype());
}

NamedArray contract(std::span<const std::string> names, const NamedArray& a, const NamedArray& b) {
  if (!a.positional_shape().empty() || !b.positional_shape().empty()) {
    throw AxisError("contract requires fully named operands, got " + a.shape_string() + " and " +
                    b.shape_string());
  }
  if (!a.is_float() || !b.is_float()) throw AxisError("contract requires float32 operands");
  std::set<std::string, std::less<>> contracted;
  for (const auto& name : names) {
    if (!contracted.insert(name).second) throw AxisError("duplicate contraction axis '" + name + "'");
    if (!a.has_axis(name)) throw AxisError("contraction axis '" + name + "' missing from left operand " + a.shape_string());
    if (!b.has_axis(name)) throw AxisError("contraction axis '" + name + "' missing from right operand " + b.shape_string());
    if (a.axis_size(name) != b.axis_size(name)) {
      throw AxisError("contraction axis '" + name + "' has sizes " + std::to_string(a.axis_size(name)) +
                      " and " + std::to_string(b.axis_size(name)));
    }
  }
  std::vector<std::string> batch, free_a, free_b;
  for (const auto& [name, size] : a.named_shape()) {
    if (contracted.contains(name)) continue;
    if (b.has_axis(name)) {
      if (b.axis_size(name) != size) {
        throw AxisError("named axis '" + name + "' has conflicting sizes " + std::to_string(size) +
                        " and " + std::to_string(b.axis_size(name)));
      }
      batch.push_back(name);
    } else {
      free_a.push_back(name);
    }
  }
  for (const auto& [name, _] : b.named_shape()) {
    if (!contracted.contains(name) && !a.has_axis(name)) free_b.push_back(name);
  }

  auto sizes_of = [](const NamedArray& x, const std::vector<std::string>& axes) {
    std::int64_t n = 1;
    for (const auto& name : axes) n *= x.axis_size(name);
    return n;
  };
  const std::vector<std::string> k_axes(names.begin(), names.end());
  const std::int64_t nb = sizes_of(a, batch), m = sizes_of(a, free_a), n = sizes_of(b, free_b);
  const std::int64_t k = sizes_of(a, k_axes);

  auto arrange = [](const NamedArray& x, const std::vector<std::string>& g1,
                    const std::vector<std::string>& g2, const std::vector<std::string>& g3) {
    std::vector<std::int64_t> sizes, strides;
    for (const auto* group : {&g1, &g2, &g3}) {
      for (const auto& name : *group) {
        sizes.push_back(x.axis_size(name));
        strides.push_back(x.stride_of(name));
      }
    }
    std::vector<float> out(static_cast<std::size_t>(x.size()));
    detail::strided_gather(x.float_data().data(), sizes, strides, 0, out.data());
    return out;
  };
  const std::vector<float> lhs = arrange(a, batch, free_a, k_axes);
  const std::vector<float> rhs = arrange(b, batch, free_b, k_axes);

  const auto dot = kernels::active().dot;
  std::vector<float> raw(static_cast<std::size_t>(nb * m * n));
  for (std::int64_t bi = 0; bi < nb; ++bi) {
    for (std::int64_t i = 0; i < m; ++i) {
      const float* row = lhs.data() + (bi * m + i) * k;
      for (std::int64_t j = 0; j < n; ++j) {
        raw[static_cast<std::size_t>((bi * m + i) * n + j)] =
            dot(row, rhs.data() + (bi * n + j) * k, static_cast<std::size_t>(k));
      }
    }
  }

  std::vector<AxisSpec> order;
  std::vector<std::int64_t> order_sizes;
  NamedShape out_named;
  for (const auto* group : {&batch, &free_a}) {
    for (const auto& name : *group) {
      order.push_back(AxisSpec::named(name));
      order_sizes.push_back(a.axis_size(name));
      out_named.emplace(name, a.axis_size(name));
    }
  }
  for (const auto& name : free_b) {
    order.push_back(AxisSpec::named(name));
    order_sizes.push_back(b.axis_size(name));
    out_named.emplace(name, b.axis_size(name));
  }
  const auto count = static_cast<std::int64_t>(raw.size());
  const NamedArray flat = NamedArray::floats({}, {count}, std::move(raw));
  return canonicalize(flat, order, order_sizes, std::move(out_named), {});
}

NamedArray reduce(ReduceOp op, const NamedArray& a, std::string_view name) {
  if (!a.has_axis(name)) throw AxisError("reduce over unknown axis '" + std::string(name) + "'");
  const std::int64_t len = a.axis_size(name);
  if (op == ReduceOp::kMean && len == 0) throw AxisError("mean over empty axis '" + std::string(name) + "'");
  std::vector<std::int64_t> sizes, strides;
  NamedShape out_named;
  for (const auto& axis : a.layout()) {
    if (axis.axis.is_named() && axis.axis.name() == name) continue;
    sizes.push_back(axis.size);
    strides.push_back(axis.stride);
    if (axis.axis.is_named()) out_named.emplace(axis.axis.name(), axis.size);
  }
  sizes.push_back(len);
  strides.push_back(a.stride_of(name));
  const NamedArray moved = detail::gather(a, sizes, strides, 0, {}, {a.size()});
  const std::int64_t rows = len == 0 ? detail::product(std::span(sizes).first(sizes.size() - 1))
                                     : moved.size() / len;

  if (a.is_float() || op == ReduceOp::kMean) {
    const NamedArray src = to_float(moved);
    auto data = src.float_data();
    std::vector<float> out(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
      auto row = data.subspan(static_cast<std::size_t>(r * len), static_cast<std::size_t>(len));
      if (op == ReduceOp::kMax) {
        float best = -std::numeric_limits<float>::infinity();
        for (float v : row) best = (std::isnan(v) || v > best) ? v : best;
        out[static_cast<std::size_t>(r)] = best;
      } else {
        double acc = 0.0;
        for (float v : row) acc += v;
        if (op == ReduceOp::kMean) acc /= static_cast<double>(len);
        out[static_cast<std::size_t>(r)] = static_cast<float>(acc);
      }
    }
    return NamedArray::floats(std::move(out_named), a.positional_shape(), std::move(out));
  }
  auto data = moved.int_data();
  std::vector<std::int32_t> out(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    auto row = data.subspan(static_cast<std::size_t>(r * len), static_cast<std::size_t>(len));
    if (op == ReduceOp::kMax) {
      std::int32_t best = std::numeric_limits<std::int32_t>::min();
      for (auto v : row) best = std::max(best, v);
      out[static_cast<std::size_t>(r)] = best;
    } else {
      std::int64_t acc = 0;
      for (auto v : row) acc += v;
      out[static_cast<std::size_t>(r)] = static_cast<std::int32_t>(acc);
    }
  }
  return NamedArray::ints(std::move(out_named), a.positional_shape(), std::move(out));
}

ArrayStats stats(const NamedArray& a) {
  if (a.size() == 0) throw AxisError("stats of an empty array");
  ArrayStats s;
  s.total_count = a.size();
  std::vector<float> finite;
  finite.reserve(static_cast<std::size_t>(a.size()));
  for (std::int64_t i = 0; i < a.size(); ++i) {
    const float v = a.value_at(i);
    if (v == 0.0f) ++s.count_zero;
    if (!std::isfinite(v)) {
      ++s.count_nonfinite;
      continue;
    }
    finite.push_back(v);
  }
  if (finite.empty()) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    s.mean = s.std = s.min = s.max = nan;
    return s;
  }
  // Same kernels as reduce over one flattened axis, so the numbers agree bit for bit.
  const auto count = static_cast<std::int64_t>(finite.size());
  const NamedArray flat = NamedArray::floats({{"__all", count}}, {}, std::move(finite));
  const float mean = reduce(ReduceOp::kMean, flat, "__all").float_data()[0];
  s.mean = mean;
  s.max = reduce(ReduceOp::kMax, flat, "__all").float_data()[0];
  s.min = -reduce(ReduceOp::kMax, scale(flat, -1.0f), "__all").float_data()[0];
  const NamedArray sq = map(flat, [mean](float v) { return (v - mean) * (v - mean); });
  s.std = std::sqrt(reduce(ReduceOp::kMean, sq, "__all").float_data()[0]);
  return s;
}

NamedArray apply_over_axes(const NamedArray& a, std::span<const std::string> axes,
                           const std::function<void(std::span<const float>, std::span<float>)>& fn) {
  std::set<std::string, std::less<>> chosen;
  for (const auto& name : axes) {
    if (!a.has_axis(name)) throw AxisError("unknown axis '" + name + "' for " + a.shape_string());
    if (!chosen.insert(name).second) throw AxisError("duplicate axis '" + name + "'");
  }
  const NamedArray x = to_float(a);
  std::vector<AxisSpec> order;
  std::vector<std::int64_t> sizes, strides;
  for (const auto& axis : x.layout()) {
    if (axis.axis.is_named() && chosen.contains(axis.axis.name())) continue;
    order.push_back(axis.axis);
    sizes.push_back(axis.size);
    strides.push_back(axis.stride);
  }
  std::int64_t block = 1;
  for (const auto& name : axes) {
    order.push_back(AxisSpec::named(name));
    sizes.push_back(x.axis_size(name));
    strides.push_back(x.stride_of(name));
    block *= x.axis_size(name);
  }
  std::vector<float> moved(static_cast<std::size_t>(x.size()));
  detail::strided_gather(x.float_data().data(), sizes, strides, 0, moved.data());
  std::vector<float> result(moved.size());
  if (block > 0) {
    for (std::size_t off = 0; off < moved.size(); off += static_cast<std::size_t>(block)) {
      fn(std::span<const float>(moved).subspan(off, static_cast<std::size_t>(block)),
         std::span<float>(result).subspan(off, static_cast<std::size_t>(block)));
    }
  }
  const auto count = static_cast<std::int64_t>(result.size());
  const NamedArray flat = NamedArray::floats({}, {count}, std::move(result));
  return canonicalize(flat, order, sizes, x.named_shape(), x.positional_shape());
}

NamedArray softmax(const NamedArray& a, std::span<const std::string> axes) {
  return apply_over_axes(a, axes, [](std::span<const float> in, std::span<float> out) {
    float hi = -std::numeric_limits<float>::infinity();
    for (float v : in) hi = std::max(hi, v);
    float total = 0.0f;
    for (std::size_t i = 0; i < in.size(); ++i) {
      out[i] = std::exp(in[i] - hi);
      total += out[i];
    }
    for (float& v : out) v /= total;
  });
}

NamedArray rename(const NamedArray& a, std::string_view from, const std::string& to) {
  if (!a.has_axis(from)) throw AxisError("rename of unknown axis '" + std::string(from) + "'");
  if (from == to) return a;
  if (a.has_axis(to)) throw AxisError("rename target '" + to + "' already exists in " + a.shape_string());
  NamedShape named;
  for (const auto& [name, size] : a.named_shape()) named.emplace(name == from ? to : name, size);
  std::vector<std::int64_t> sizes, strides;
  for (const auto& [name, size] : named) {
    sizes.push_back(size);
    strides.push_back(a.stride_of(name == to ? std::string(from) : name));
  }
  const auto layout = a.layout();
  for (std::size_t i = a.named_shape().size(); i < layout.size(); ++i) {
    sizes.push_back(layout[i].size);
    strides.push_back(layout[i].stride);
  }
  return detail::gather(a, sizes, strides, 0, std::move(named), a.positional_shape());
}

NamedArray slice(const NamedArray& a, std::string_view name, std::int64_t index) {
  const std::int64_t len = a.axis_size(name);
  if (index < 0 || index >= len) {
    throw AxisError("index " + std::to_string(index) + " out of range for axis '" + std::string(name) +
                    "' of size " + std::to_string(len));
  }
  std::vector<std::int64_t> sizes, strides;
  NamedShape named;
  for (const auto& axis : a.layout()) {
    if (axis.axis.is_named() && axis.axis.name() == name) continue;
    sizes.push_back(axis.size);
    strides.push_back(axis.stride);
    if (axis.axis.is_named()) named.emplace(axis.axis.name(), axis.size);
  }
  return detail::gather(a, sizes, strides, index * a.stride_of(name), std::move(named),
                        a.positional_shape());
}

NamedArray set_slice(const NamedArray& a, std::string_view name, std::int64_t index,
                     const NamedArray& value) {
  const std::int64_t len = a.axis_size(name);
  if (index < 0 || index >= len) {
    throw AxisError("index " + std::to_string(index) + " out of range for axis '" + std::string(name) + "'");
  }
  NamedShape slice_named = a.named_shape();
  slice_named.erase(slice_named.find(name));
  for (const auto& [axis, size] : value.named_shape()) {
    if (!slice_named.contains(axis) || slice_named.at(axis) != size) {
      throw AxisError("set_slice value " + value.shape_string() + " does not fit " + a.shape_string());
    }
  }
  const NamedArray fitted = broadcast_layout(a.is_float() ? to_float(value) : value, slice_named,
                                             a.positional_shape());
  std::vector<std::int64_t> sizes, strides;
  for (const auto& axis : a.layout()) {
    if (axis.axis.is_named() && axis.axis.name() == name) continue;
    sizes.push_back(axis.size);
    strides.push_back(axis.stride);
  }
  const auto targets = offsets_of(sizes, strides, index * a.stride_of(name));
  if (a.is_float()) {
    std::vector<float> out(a.float_data().begin(), a.float_data().end());
    auto src = fitted.float_data();
    for (std::size_t i = 0; i < targets.size(); ++i) out[static_cast<std::size_t>(targets[i])] = src[i];
    return NamedArray::floats(a.named_shape(), a.positional_shape(), std::move(out));
  }
  std::vector<std::int32_t> out(a.int_data().begin(), a.int_data().end());
  auto src = fitted.int_data();
  for (std::size_t i = 0; i < targets.size(); ++i) out[static_cast<std::size_t>(targets[i])] = src[i];
  return NamedArray::ints(a.named_shape(), a.positional_shape(), std::move(out), a.dtype());
}

NamedArray update_range(const NamedArray& a, std::string_view name, std::int64_t offset,
                        const NamedArray& values) {
  const std::int64_t count = values.axis_size(name);
  if (offset < 0 || offset + count > a.axis_size(name)) {
    throw AxisError("range [" + std::to_string(offset) + ", " + std::to_string(offset + count) +
                    ") exceeds axis '" + std::string(name) + "' of size " +
                    std::to_string(a.axis_size(name)));
  }
  NamedArray out = a;
  for (std::int64_t t = 0; t < count; ++t) out = set_slice(out, name, offset + t, slice(values, name, t));
  return out;
}

NamedArray broadcast_to(const NamedArray& a, const NamedShape& target) {
  for (const auto& [name, size] : a.named_shape()) {
    auto it = target.find(name);
    if (it == target.end() || it->second != size) {
      throw AxisError("cannot broadcast " + a.shape_string() + " to the requested named shape");
    }
  }
  return broadcast_layout(a, target, a.positional_shape());
}

NamedArray stack(std::span<const NamedArray> parts, const std::string& name) {
  if (parts.empty()) throw AxisError("stack of zero arrays");
  const NamedArray& first = parts.front();
  if (first.has_axis(name)) throw AxisError("stack axis '" + name + "' already present");
  std::vector<float> floats;
  std::vector<std::int32_t> ints;
  for (const auto& part : parts) {
    if (part.named_shape() != first.named_shape() || part.positional_shape() != first.positional_shape() ||
        part.dtype() != first.dtype()) {
      throw AxisError("stack requires identical shapes and dtypes");
    }
    if (part.is_float()) {
      floats.insert(floats.end(), part.float_data().begin(), part.float_data().end());
    } else {
      ints.insert(ints.end(), part.int_data().begin(), part.int_data().end());
    }
  }
  std::vector<AxisSpec> order{AxisSpec::named(name)};
  std::vector<std::int64_t> order_sizes{static_cast<std::int64_t>(parts.size())};
  for (const auto& axis : first.layout()) {
    order.push_back(axis.axis);
    order_sizes.push_back(axis.size);
  }
  NamedShape named = first.named_shape();
  named.emplace(name, static_cast<std::int64_t>(parts.size()));
  const std::int64_t total = static_cast<std::int64_t>(first.is_float() ? floats.size() : ints.size());
  const NamedArray flat = first.is_float()
                              ? NamedArray::floats({}, {total}, std::move(floats))
                              : NamedArray::ints({}, {total}, std::move(ints), first.dtype());
  return canonicalize(flat, order, order_sizes, std::move(named), first.positional_shape());
}

NamedArray to_float(const NamedArray& a) {
  if (a.is_float()) return a;
  auto data = a.int_data();
  return NamedArray::floats(a.named_shape(), a.positional_shape(), std::vector<float>(data.begin(), data.end()));
}

float max_abs_diff(const NamedArray& a, const NamedArray& b) {
  if (a.named_shape() != b.named_shape() || a.positional_shape() != b.positional_shape()) {
    throw AxisError("max_abs_diff shape mismatch: " + a.shape_string() + " vs " + b.shape_string());
  }
  float worst = 0.0f;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    const float d = std::fabs(a.value_at(i) - b.value_at(i));
    if (std::isnan(d)) return std::numeric_limits<float>::infinity();
    worst = std::max(worst, d);
  }
  return worst;
}

}  // namespace modelforge::nx
