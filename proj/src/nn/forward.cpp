#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>

#include "modelforge/error.hpp"
#include "modelforge/nn.hpp"
#include "nn/internal.hpp"

namespace modelforge::nn {

using tree::KindRegistry;
using tree::Node;
using tree::TreePath;

namespace detail {

const std::string& builtin_name(const tree::KindInfo& kind) {
  const tree::KindInfo* k = &kind;
  for (int depth = 0; k != nullptr && depth < 64; ++depth) {
    if (k->qualified_name.starts_with("modelforge.nn.")) return k->name;
    if (k->base.empty()) break;
    k = KindRegistry::global().find(k->base);
  }
  throw KindError("kind '" + kind.qualified_name + "' has no forward rule");
}

bool known_elementwise(std::string_view fn) {
  return fn == "relu" || fn == "gelu_tanh" || fn == "silu" || fn == "tanh" || fn == "exp" || fn == "identity";
}

namespace {
constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2/pi)
constexpr float kGeluA = 0.044715f;
}  // namespace

float elementwise_value(std::string_view fn, float x) {
  if (fn == "relu") return x > 0.0f ? x : 0.0f;
  if (fn == "gelu_tanh") return 0.5f * x * (1.0f + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
  if (fn == "silu") return x / (1.0f + std::exp(-x));
  if (fn == "tanh") return std::tanh(x);
  if (fn == "exp") return std::exp(x);
  if (fn == "identity") return x;
  throw ForwardError("unknown elementwise fn '" + std::string(fn) + "'");
}

float elementwise_derivative(std::string_view fn, float x) {
  if (fn == "relu") return x > 0.0f ? 1.0f : 0.0f;
  if (fn == "gelu_tanh") {
    const float t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
    return 0.5f * (1.0f + t) + 0.5f * x * (1.0f - t * t) * kGeluC * (1.0f + 3.0f * kGeluA * x * x);
  }
  if (fn == "silu") {
    const float s = 1.0f / (1.0f + std::exp(-x));
    return s * (1.0f + x * (1.0f - s));
  }
  if (fn == "tanh") {
    const float t = std::tanh(x);
    return 1.0f - t * t;
  }
  if (fn == "exp") return std::exp(x);
  if (fn == "identity") return 1.0f;
  throw ForwardError("unknown elementwise fn '" + std::string(fn) + "'");
}

AxisNames strings_of(const Value& list) {
  AxisNames out;
  for (const auto& item : list.as_list()) out.push_back(item.as_string());
  return out;
}

NamedArray one_hot(const NamedArray& tokens, const std::string& vocab_axis, std::int64_t vocab) {
  if (tokens.is_float()) throw ForwardError("token ids must be an integer array");
  if (!tokens.positional_shape().empty()) throw ForwardError("token ids must be fully named");
  if (tokens.has_axis(vocab_axis)) throw ForwardError("token ids already carry axis '" + vocab_axis + "'");
  auto ids = tokens.int_data();
  std::vector<float> data(ids.size() * static_cast<std::size_t>(vocab), 0.0f);
  // Build with vocab innermost, then move it into canonical position.
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab) {
      throw ForwardError("token id " + std::to_string(ids[i]) + " out of range for vocabulary of " +
                         std::to_string(vocab));
    }
    data[i * static_cast<std::size_t>(vocab) + static_cast<std::size_t>(ids[i])] = 1.0f;
  }
  return NamedArray::floats(tokens.named_shape(), {vocab}, std::move(data)).tag({vocab_axis});
}

AxisNames table_feature_axes(const NamedArray& table, const std::string& vocab_axis) {
  if (!table.has_axis(vocab_axis)) throw ForwardError("table lacks vocabulary axis '" + vocab_axis + "'");
  AxisNames out;
  for (const auto& [name, _] : table.named_shape()) {
    if (name != vocab_axis) out.push_back(name);
  }
  return out;
}

NamedArray normalize(const NamedArray& x, const std::string& axis, float epsilon, bool rms) {
  const std::string axes[] = {axis};
  return nx::apply_over_axes(x, axes, [&](std::span<const float> in, std::span<float> out) {
    const auto n = static_cast<float>(in.size());
    float mean = 0.0f;
    if (!rms) {
      for (float v : in) mean += v;
      mean /= n;
    }
    float var = 0.0f;
    for (float v : in) var += (v - mean) * (v - mean);
    var /= n;
    const float r = 1.0f / std::sqrt(var + epsilon);
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = (in[i] - mean) * r;
  });
}

NamedArray rewire_slices(const NamedArray& x, const std::string& worlds_axis, std::int64_t source,
                         const std::vector<std::int64_t>& destinations) {
  if (!x.has_axis(worlds_axis)) throw ForwardError("input lacks worlds axis '" + worlds_axis + "'");
  const std::int64_t worlds = x.axis_size(worlds_axis);
  auto check = [&](std::int64_t i) {
    if (i < 0 || i >= worlds) {
      throw ForwardError("world index " + std::to_string(i) + " out of range for worlds axis of size " +
                         std::to_string(worlds));
    }
  };
  check(source);
  for (auto d : destinations) {
    check(d);
  }
  if (destinations.empty()) return x;
  const NamedArray src = nx::slice(x, worlds_axis, source);
  NamedArray out = x;
  for (auto d : destinations) {
    if (d != source) out = nx::set_slice(out, worlds_axis, d, src);
  }
  return out;
}

}  // namespace detail

NamedArray apply_causal_mask(const NamedArray& logits, const NamedArray& query_pos, const NamedArray& kv_pos,
                             float masked_value) {
  if (query_pos.is_float() || kv_pos.is_float()) throw ForwardError("causal mask positions must be integers");
  const NamedArray gap = nx::sub(kv_pos, query_pos);
  for (const auto& [name, size] : gap.named_shape()) {
    if (!logits.has_axis(name) || logits.axis_size(name) != size) {
      throw AxisError("position axis '" + name + "' does not match logits " + logits.shape_string());
    }
  }
  const NamedArray mask = nx::broadcast_to(gap, logits.named_shape());
  const NamedArray x = nx::to_float(logits);
  auto in = x.float_data();
  auto m = mask.int_data();
  std::vector<float> out(in.begin(), in.end());
  const std::size_t inner = in.size() / std::max<std::size_t>(m.size(), 1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (m[i / std::max<std::size_t>(inner, 1)] > 0) out[i] = masked_value;
  }
  return NamedArray::floats(x.named_shape(), x.positional_shape(), std::move(out));
}

NamedArray rope(const NamedArray& x, const NamedArray& positions, const std::string& embedding_axis,
                float max_wavelength) {
  if (positions.is_float()) throw ForwardError("RoPE positions must be integers");
  if (!x.positional_shape().empty()) throw AxisError("RoPE input must be fully named, got " + x.shape_string());
  const std::int64_t d = x.axis_size(embedding_axis);
  if (d % 2 != 0) throw AxisError("RoPE axis '" + embedding_axis + "' must have even size");
  const std::int64_t half = d / 2;
  NamedShape others = x.named_shape();
  others.erase(others.find(embedding_axis));
  const NamedArray pos = nx::broadcast_to(positions, others);
  auto p = pos.int_data();
  std::vector<float> inv_timescale(static_cast<std::size_t>(half));
  for (std::int64_t i = 0; i < half; ++i) {
    inv_timescale[static_cast<std::size_t>(i)] =
        1.0f / std::pow(max_wavelength, static_cast<float>(2 * i) / static_cast<float>(d));
  }
  std::size_t block = 0;
  const std::string axes[] = {embedding_axis};
  return nx::apply_over_axes(x, axes, [&](std::span<const float> in, std::span<float> out) {
    const auto position = static_cast<float>(p[block++]);
    for (std::int64_t i = 0; i < half; ++i) {
      const float angle = position * inv_timescale[static_cast<std::size_t>(i)];
      const float c = std::cos(angle);
      const float s = std::sin(angle);
      const float a = in[static_cast<std::size_t>(i)];
      const float b = in[static_cast<std::size_t>(i + half)];
      out[static_cast<std::size_t>(i)] = a * c - b * s;
      out[static_cast<std::size_t>(i + half)] = b * c + a * s;
    }
  });
}

namespace {

TreePath step(const TreePath& path, const std::string& field) { return path.child(field); }

class Runner {
 public:
  explicit Runner(Trace* trace) : trace_(trace) {}

  NamedArray run(const Value& layer, const NamedArray& x, const SideInputs& side, const TreePath& path) {
    if (!layer.is_node()) throw ForwardError("non-layer value at " + path.to_string());
    const Node& node = *layer.as_node();
    const std::string& kind = detail::builtin_name(node.kind());

    if (kind == "Sequential") {
      NamedArray h = x;
      const auto& kids = node.field("children").as_list();
      for (std::size_t i = 0; i < kids.size(); ++i) {
        h = run(kids[i], h, side, path.child("children").child(static_cast<std::int64_t>(i)));
      }
      return h;
    }
    if (kind == "BranchAndAddTogether" || kind == "BranchAndMultiplyTogether") {
      const auto& branches = node.field("branches").as_list();
      if (branches.empty()) throw ForwardError(kind + " with no branches at " + path.to_string());
      const bool add = kind == "BranchAndAddTogether";
      std::optional<NamedArray> acc;
      for (std::size_t i = 0; i < branches.size(); ++i) {
        NamedArray y = run(branches[i], x, side, path.child("branches").child(static_cast<std::int64_t>(i)));
        acc = acc ? (add ? nx::add(*acc, y) : nx::mul(*acc, y)) : y;
      }
      return *acc;
    }
    if (kind == "Residual") return nx::add(x, run(node.field("body"), x, side, step(path, "body")));
    if (kind == "Attention") return attention(node, x, side, path);
    if (kind == "KVCachingAttention") return cached_attention(node, x, side, path);

    if (trace_) trace_->push_back(node.kind_name());
    try {
      return primitive(kind, node, x, side, path);
    } catch (const ForwardError& e) {
      throw ForwardError(node.kind_name() + " at " + path.to_string() + ": " + e.what());
    } catch (const Error& e) {
      throw ForwardError(node.kind_name() + " at " + path.to_string() + ": " + e.what());
    }
  }

 private:
  NamedArray attention(const Node& node, const NamedArray& x, const SideInputs& side, const TreePath& path) {
    NamedArray q = run(node.field("input_to_query"), x, side, step(path, "input_to_query"));
    NamedArray k = run(node.field("input_to_key"), x, side, step(path, "input_to_key"));
    NamedArray v = run(node.field("input_to_value"), x, side, step(path, "input_to_value"));
    SideInputs with_keys = side;
    with_keys[kAttnAux] = k;
    NamedArray w = run(node.field("query_key_to_attn"), q, with_keys, step(path, "query_key_to_attn"));
    SideInputs with_values = side;
    with_values[kAttnAux] = v;
    return run(node.field("attn_value_to_output"), w, with_values, step(path, "attn_value_to_output"));
  }

  NamedArray cached_attention(const Node& node, const NamedArray& x, const SideInputs& side,
                              const TreePath& path) {
    const auto& key_cache = node.field("key_cache").as_variable();
    const auto& value_cache = node.field("value_cache").as_variable();
    const auto& counter = node.field("position_counter").as_variable();
    const std::int64_t cache_len = node.field("cache_len").as_int();
    const std::string& kv_axis = node.field("kv_axis").as_string();

    NamedArray q = run(node.field("input_to_query"), x, side, step(path, "input_to_query"));
    NamedArray k = run(node.field("input_to_key"), x, side, step(path, "input_to_key"));
    NamedArray v = run(node.field("input_to_value"), x, side, step(path, "input_to_value"));

    const std::int64_t offset = counter->value().int_data()[0];
    const std::int64_t steps = k.axis_size(kv_axis);
    if (offset + steps > cache_len) {
      throw ForwardError("KV cache overflow at " + path.to_string() + ": " + std::to_string(offset) + " + " +
                         std::to_string(steps) + " exceeds cache length " + std::to_string(cache_len));
    }
    key_cache->set_value(nx::update_range(key_cache->value(), kv_axis, offset, k));
    value_cache->set_value(nx::update_range(value_cache->value(), kv_axis, offset, v));

    // Slots past the written prefix get a position no query can reach.
    std::vector<std::int32_t> kv_pos(static_cast<std::size_t>(cache_len));
    for (std::int64_t j = 0; j < cache_len; ++j) {
      kv_pos[static_cast<std::size_t>(j)] =
          j < offset + steps ? static_cast<std::int32_t>(j) : std::numeric_limits<std::int32_t>::max() / 2;
    }
    SideInputs cached = side;
    cached[node.field("kv_positions_side_input").as_string()] =
        NamedArray::ints({{kv_axis, cache_len}}, {}, std::move(kv_pos));
    SideInputs with_keys = cached;
    with_keys[kAttnAux] = key_cache->value();
    NamedArray w = run(node.field("query_key_to_attn"), q, with_keys, step(path, "query_key_to_attn"));
    SideInputs with_values = cached;
    with_values[kAttnAux] = value_cache->value();
    return run(node.field("attn_value_to_output"), w, with_values, step(path, "attn_value_to_output"));
  }

  NamedArray primitive(const std::string& kind, const Node& node, const NamedArray& x, const SideInputs& side,
                       const TreePath& path) {
    if (kind == "Linear") {
      const AxisNames in = detail::strings_of(node.field("input_axes"));
      return nx::contract(in, x, node.field("weights").as_variable()->value());
    }
    if (kind == "AddBias") return nx::add(x, node.field("bias").as_variable()->value());
    if (kind == "Elementwise") {
      const std::string fn = node.field("fn").as_string();
      if (!detail::known_elementwise(fn)) throw ForwardError("unknown elementwise fn '" + fn + "'");
      return nx::map(x, [&](float v) { return detail::elementwise_value(fn, v); });
    }
    if (kind == "Softmax") {
      const AxisNames axes = detail::strings_of(node.field("axes"));
      return nx::softmax(x, axes);
    }
    if (kind == "ApplyCausalAttentionMask") {
      return apply_causal_mask(x, detail::side_input(side, node.field("query_pos_side_input").as_string()),
                               detail::side_input(side, node.field("kv_pos_side_input").as_string()),
                               node.field("masked_value").as_float());
    }
    if (kind == "EmbeddingLookup") {
      const NamedArray& table = node.field("table").as_variable()->value();
      const std::string& vocab = node.field("vocab_axis").as_string();
      const NamedArray hot = detail::one_hot(x, vocab, table.axis_size(vocab));
      const std::string axes[] = {vocab};
      return nx::contract(axes, hot, table);
    }
    if (kind == "EmbeddingDecode") {
      const NamedArray& table = node.field("table").as_variable()->value();
      return nx::contract(detail::table_feature_axes(table, node.field("vocab_axis").as_string()), x, table);
    }
    if (kind == "LayerNorm" || kind == "RMSNorm") {
      const bool rms = kind == "RMSNorm";
      const std::string& axis = node.field("axis").as_string();
      NamedArray y = detail::normalize(x, axis, node.field("epsilon").as_float(), rms);
      y = nx::mul(y, node.field("scale").as_variable()->value());
      if (!rms) y = nx::add(y, node.field("bias").as_variable()->value());
      return y;
    }
    if (kind == "ConstantRescale") return nx::scale(x, node.field("by").as_float());
    if (kind == "ApplyRoPE") {
      return rope(x, detail::side_input(side, node.field("positions_side_input").as_string()),
                  node.field("embedding_axis").as_string(), node.field("max_wavelength").as_float());
    }
    if (kind == "RenameAxes") return nx::rename(x, node.field("old").as_string(), node.field("new").as_string());
    if (kind == "ContractWithSideInput") {
      const AxisNames axes = detail::strings_of(node.field("axes"));
      return nx::contract(axes, x, detail::side_input(side, node.field("side_input").as_string()));
    }
    if (kind == "ConstantMultiply") return nx::mul(x, node.field("values").as_array());
    if (kind == "LinearizeAndAdjust") return linearized(node, x, side);
    if (kind == "RewireComputationPaths") {
      std::vector<std::int64_t> dst;
      for (const auto& d : node.field("destination_indices").as_list()) dst.push_back(d.as_int());
      return detail::rewire_slices(x, node.field("worlds_axis").as_string(), node.field("source_index").as_int(),
                                   dst);
    }
    if (kind == "AdvancePositionCounter") {
      const auto& counter = node.field("counter").as_variable();
      const std::int64_t steps = x.axis_size(node.field("sequence_axis").as_string());
      counter->set_value(NamedArray::scalar_int(counter->value().int_data()[0] + static_cast<std::int32_t>(steps)));
      return x;
    }
    throw ForwardError("no forward rule for kind '" + kind + "' at " + path.to_string());
  }

  NamedArray linearized(const Node& node, const NamedArray& x, const SideInputs& side) {
    const std::string& worlds = node.field("worlds_axis").as_string();
    if (!x.has_axis(worlds)) throw ForwardError("input lacks worlds axis '" + worlds + "'");
    const std::int64_t ref = node.field("reference_index").as_int();
    if (ref < 0 || ref >= x.axis_size(worlds)) {
      throw ForwardError("reference index " + std::to_string(ref) + " out of range for worlds axis of size " +
                         std::to_string(x.axis_size(worlds)));
    }
    const NamedArray x_ref = nx::broadcast_to(nx::slice(x, worlds, ref), x.named_shape());
    const NamedArray dx = nx::sub(x, x_ref);
    JvpResult r = jvp_general(node.field("target"), x_ref, dx, side, {});
    return r.tangent ? nx::add(r.primal, *r.tangent) : r.primal;
  }

  Trace* trace_;
};

}  // namespace

NamedArray forward(const Value& layer, const NamedArray& x, const SideInputs& side, Trace* trace) {
  register_kinds();
  Runner runner(trace);
  return runner.run(layer, x, side, TreePath());
}

}  // namespace modelforge::nn
