#include <cmath>
#include <mutex>
#include <random>

#include "modelforge/error.hpp"
#include "modelforge/nn.hpp"

namespace modelforge::nn {

using tree::KindInfo;
using tree::KindRegistry;
using tree::Node;
using tree::SlotType;

namespace {

void add_kind(std::string name, std::vector<tree::SlotSpec> slots, std::string base = "") {
  KindInfo info;
  info.qualified_name = "modelforge.nn." + name;
  info.name = std::move(name);
  info.slots = std::move(slots);
  info.base = std::move(base);
  KindRegistry::global().add(std::move(info));
}

Value::List string_list(const AxisNames& names) {
  Value::List out;
  for (const auto& name : names) out.emplace_back(name);
  return out;
}

Value make(std::string_view kind, std::vector<std::pair<std::string, Value>> fields) {
  register_kinds();
  return Value(Node::make(kind, std::move(fields)));
}

}  // namespace

void register_kinds() {
  static std::once_flag once;
  std::call_once(once, [] {
    const std::vector<tree::SlotSpec> attention_slots = {
        {"input_to_query", SlotType::kNode},     {"input_to_key", SlotType::kNode},
        {"input_to_value", SlotType::kNode},     {"query_key_to_attn", SlotType::kNode},
        {"attn_value_to_output", SlotType::kNode},
    };
    add_kind("Sequential", {{"children", SlotType::kNodeList}});
    add_kind("BranchAndAddTogether", {{"branches", SlotType::kNodeList}});
    add_kind("BranchAndMultiplyTogether", {{"branches", SlotType::kNodeList}});
    add_kind("Residual", {{"body", SlotType::kNode}});
    add_kind("Attention", attention_slots);
    auto kv_slots = attention_slots;
    kv_slots.push_back({"key_cache", SlotType::kVariable});
    kv_slots.push_back({"value_cache", SlotType::kVariable});
    kv_slots.push_back({"position_counter", SlotType::kVariable});
    kv_slots.push_back({"cache_len", SlotType::kInt});
    kv_slots.push_back({"kv_axis", SlotType::kString});
    kv_slots.push_back({"kv_positions_side_input", SlotType::kString});
    add_kind("KVCachingAttention", kv_slots);
    add_kind("Linear", {{"weights", SlotType::kVariable},
                        {"input_axes", SlotType::kStringList},
                        {"output_axes", SlotType::kStringList}});
    add_kind("AddBias", {{"bias", SlotType::kVariable}, {"axes", SlotType::kStringList}});
    add_kind("Elementwise", {{"fn", SlotType::kString}});
    add_kind("Softmax", {{"axes", SlotType::kStringList}});
    add_kind("ApplyCausalAttentionMask", {{"masked_value", SlotType::kFloat},
                                          {"query_pos_side_input", SlotType::kString},
                                          {"kv_pos_side_input", SlotType::kString}});
    add_kind("EmbeddingLookup", {{"table", SlotType::kVariable}, {"vocab_axis", SlotType::kString}});
    add_kind("EmbeddingDecode", {{"table", SlotType::kVariable}, {"vocab_axis", SlotType::kString}});
    add_kind("LayerNorm", {{"scale", SlotType::kVariable},
                           {"bias", SlotType::kVariable},
                           {"axis", SlotType::kString},
                           {"epsilon", SlotType::kFloat}});
    add_kind("RMSNorm", {{"scale", SlotType::kVariable}, {"axis", SlotType::kString}, {"epsilon", SlotType::kFloat}});
    add_kind("ConstantRescale", {{"by", SlotType::kFloat}});
    add_kind("ApplyRoPE", {{"embedding_axis", SlotType::kString},
                           {"positions_side_input", SlotType::kString},
                           {"max_wavelength", SlotType::kFloat}});
    add_kind("RenameAxes", {{"old", SlotType::kString}, {"new", SlotType::kString}});
    add_kind("ContractWithSideInput", {{"axes", SlotType::kStringList}, {"side_input", SlotType::kString}});
    add_kind("ConstantMultiply", {{"values", SlotType::kArray}});
    add_kind("LinearizeAndAdjust", {{"target", SlotType::kNode},
                                    {"worlds_axis", SlotType::kString},
                                    {"reference_index", SlotType::kInt}});
    add_kind("RewireComputationPaths", {{"worlds_axis", SlotType::kString},
                                        {"source_index", SlotType::kInt},
                                        {"destination_indices", SlotType::kIntList}});
    add_kind("AdvancePositionCounter", {{"counter", SlotType::kVariable}, {"sequence_axis", SlotType::kString}});
  });
}

bool is_combinator(const KindInfo& kind) {
  if (KindRegistry::global().is_subkind(kind, "modelforge.nn.LinearizeAndAdjust")) return false;
  for (const auto& slot : kind.slots) {
    if (slot.type == SlotType::kNode || slot.type == SlotType::kNodeList) return true;
  }
  return false;
}

Value sequential(std::vector<Value> children) {
  return make("modelforge.nn.Sequential", {{"children", Value::List(std::move(children))}});
}

Value sequential_as(std::string_view kind, std::vector<Value> children) {
  register_kinds();
  const KindInfo& info = KindRegistry::global().get(kind);
  if (!KindRegistry::global().is_subkind(info, "modelforge.nn.Sequential")) {
    throw KindError("'" + info.name + "' is not a Sequential subkind");
  }
  return Value(Node::make(info.qualified_name, {{"children", Value::List(std::move(children))}}));
}

Value branch_and_add(std::vector<Value> branches) {
  return make("modelforge.nn.BranchAndAddTogether", {{"branches", Value::List(std::move(branches))}});
}

Value branch_and_multiply(std::vector<Value> branches) {
  return make("modelforge.nn.BranchAndMultiplyTogether", {{"branches", Value::List(std::move(branches))}});
}

Value residual(Value body) { return make("modelforge.nn.Residual", {{"body", std::move(body)}}); }

Value attention(Value input_to_query, Value input_to_key, Value input_to_value, Value query_key_to_attn,
                Value attn_value_to_output) {
  return make("modelforge.nn.Attention", {{"input_to_query", std::move(input_to_query)},
                                          {"input_to_key", std::move(input_to_key)},
                                          {"input_to_value", std::move(input_to_value)},
                                          {"query_key_to_attn", std::move(query_key_to_attn)},
                                          {"attn_value_to_output", std::move(attn_value_to_output)}});
}

Value linear(VariablePtr weights, AxisNames input_axes, AxisNames output_axes) {
  for (const auto* group : {&input_axes, &output_axes}) {
    for (const auto& name : *group) {
      if (!weights->value().has_axis(name)) {
        throw AxisError("Linear weights " + weights->value().shape_string() + " lack axis '" + name + "'");
      }
    }
  }
  if (weights->value().named_shape().size() != input_axes.size() + output_axes.size()) {
    throw AxisError("Linear weights " + weights->value().shape_string() +
                    " must carry exactly the input and output axes");
  }
  return make("modelforge.nn.Linear", {{"weights", std::move(weights)},
                                       {"input_axes", string_list(input_axes)},
                                       {"output_axes", string_list(output_axes)}});
}

Value add_bias(VariablePtr bias) {
  const AxisNames axes = bias->value().axis_names();
  return make("modelforge.nn.AddBias", {{"bias", std::move(bias)}, {"axes", string_list(axes)}});
}

Value elementwise(std::string fn) { return make("modelforge.nn.Elementwise", {{"fn", std::move(fn)}}); }

Value softmax(AxisNames axes) { return make("modelforge.nn.Softmax", {{"axes", string_list(axes)}}); }

Value causal_mask(std::string query_pos_side_input, std::string kv_pos_side_input, float masked_value) {
  return make("modelforge.nn.ApplyCausalAttentionMask", {{"masked_value", masked_value},
                                                         {"query_pos_side_input", std::move(query_pos_side_input)},
                                                         {"kv_pos_side_input", std::move(kv_pos_side_input)}});
}

Value embedding_lookup(VariablePtr table, std::string vocab_axis) {
  return make("modelforge.nn.EmbeddingLookup", {{"table", std::move(table)}, {"vocab_axis", std::move(vocab_axis)}});
}

Value embedding_decode(VariablePtr table, std::string vocab_axis) {
  return make("modelforge.nn.EmbeddingDecode", {{"table", std::move(table)}, {"vocab_axis", std::move(vocab_axis)}});
}

Value layer_norm(VariablePtr scale, VariablePtr bias, std::string axis, float epsilon) {
  return make("modelforge.nn.LayerNorm",
              {{"scale", std::move(scale)}, {"bias", std::move(bias)}, {"axis", std::move(axis)}, {"epsilon", epsilon}});
}

Value rms_norm(VariablePtr scale, std::string axis, float epsilon) {
  return make("modelforge.nn.RMSNorm", {{"scale", std::move(scale)}, {"axis", std::move(axis)}, {"epsilon", epsilon}});
}

Value constant_rescale(float by) { return make("modelforge.nn.ConstantRescale", {{"by", by}}); }

Value apply_rope(std::string embedding_axis, std::string positions_side_input, float max_wavelength) {
  return make("modelforge.nn.ApplyRoPE", {{"embedding_axis", std::move(embedding_axis)},
                                          {"positions_side_input", std::move(positions_side_input)},
                                          {"max_wavelength", max_wavelength}});
}

Value rename_axes(std::string from, std::string to) {
  return make("modelforge.nn.RenameAxes", {{"old", std::move(from)}, {"new", std::move(to)}});
}

Value contract_with_side_input(AxisNames axes, std::string side_input) {
  return make("modelforge.nn.ContractWithSideInput",
              {{"axes", string_list(axes)}, {"side_input", std::move(side_input)}});
}

Value constant_multiply(NamedArray values) {
  return make("modelforge.nn.ConstantMultiply", {{"values", std::move(values)}});
}

Value linearize_and_adjust(Value target, std::string worlds_axis, std::int64_t reference_index) {
  return make("modelforge.nn.LinearizeAndAdjust", {{"target", std::move(target)},
                                                   {"worlds_axis", std::move(worlds_axis)},
                                                   {"reference_index", reference_index}});
}

Value rewire(std::string worlds_axis, std::int64_t source_index, std::vector<std::int64_t> destination_indices) {
  Value::List dst;
  for (auto d : destination_indices) dst.emplace_back(d);
  return make("modelforge.nn.RewireComputationPaths", {{"worlds_axis", std::move(worlds_axis)},
                                                       {"source_index", source_index},
                                                       {"destination_indices", std::move(dst)}});
}

Value advance_position_counter(VariablePtr counter, std::string sequence_axis) {
  return make("modelforge.nn.AdvancePositionCounter",
              {{"counter", std::move(counter)}, {"sequence_axis", std::move(sequence_axis)}});
}

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

NamedArray Initializer::uniform(const std::string& label, const NamedShape& shape, float limit) const {
  std::mt19937_64 gen(splitmix64(seed_ ^ fnv1a(label)));
  std::int64_t total = 1;
  for (const auto& [_, size] : shape) total *= size;
  std::vector<float> data(static_cast<std::size_t>(total));
  for (auto& v : data) {
    // 24 random bits -> [0, 1); avoids implementation-defined distributions.
    const float u = static_cast<float>(gen() >> 40) * (1.0f / 16777216.0f);
    v = (2.0f * u - 1.0f) * limit;
  }
  return NamedArray::floats(shape, {}, std::move(data));
}

NamedArray Initializer::glorot(const std::string& label, const NamedShape& shape, const AxisNames& fan_in_axes,
                               const AxisNames& fan_out_axes) const {
  auto fan = [&](const AxisNames& axes) {
    std::int64_t n = 1;
    for (const auto& name : axes) {
      auto it = shape.find(name);
      if (it == shape.end()) throw AxisError("fan axis '" + name + "' not in parameter shape");
      n *= it->second;
    }
    return n;
  };
  const double limit = std::sqrt(6.0 / static_cast<double>(fan(fan_in_axes) + fan(fan_out_axes)));
  return uniform(label, shape, static_cast<float>(limit));
}

}  // namespace modelforge::nn
