#pragma once

// Layers: combinators and primitives as tree nodes, the forward interpreter,
// mutable variables with freeze/unfreeze, and a forward-mode JVP.
//
// Every layer takes one main input and a read-only map of side inputs shared
// by the whole forward pass. Combinators route values between children and do
// no arithmetic; primitives each perform one named-axis operation.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "modelforge/named_array.hpp"
#include "modelforge/tree.hpp"

namespace modelforge::nn {

using tree::NodePtr;
using tree::Value;
using tree::VariablePtr;

using SideInputs = std::map<std::string, NamedArray, std::less<>>;

// Side input through which Attention hands the second operand (keys, then
// values) to its pairwise children.
inline constexpr const char* kAttnAux = "attn_aux";
inline constexpr float kDefaultMaskedValue = -1e9f;

// Registers the built-in layer kinds. Idempotent; builders call it.
void register_kinds();

// True for kinds with node-valued slots that only route between children.
bool is_combinator(const tree::KindInfo& kind);

// ---- builders -------------------------------------------------------------

Value sequential(std::vector<Value> children);
// A Sequential subkind registered under `kind`; same semantics, own name.
Value sequential_as(std::string_view kind, std::vector<Value> children);
Value branch_and_add(std::vector<Value> branches);
Value branch_and_multiply(std::vector<Value> branches);
Value residual(Value body);
Value attention(Value input_to_query, Value input_to_key, Value input_to_value, Value query_key_to_attn,
                Value attn_value_to_output);

Value linear(VariablePtr weights, AxisNames input_axes, AxisNames output_axes);
Value add_bias(VariablePtr bias);
// fn is one of relu, gelu_tanh, silu, tanh, exp, identity.
Value elementwise(std::string fn);
Value softmax(AxisNames axes);
Value causal_mask(std::string query_pos_side_input = "token_positions",
                  std::string kv_pos_side_input = "kv_token_positions",
                  float masked_value = kDefaultMaskedValue);
Value embedding_lookup(VariablePtr table, std::string vocab_axis);
Value embedding_decode(VariablePtr table, std::string vocab_axis);
Value layer_norm(VariablePtr scale, VariablePtr bias, std::string axis, float epsilon = 1e-5f);
Value rms_norm(VariablePtr scale, std::string axis, float epsilon = 1e-6f);
Value constant_rescale(float by);
Value apply_rope(std::string embedding_axis, std::string positions_side_input, float max_wavelength);
Value rename_axes(std::string from, std::string to);
Value contract_with_side_input(AxisNames axes, std::string side_input);
Value constant_multiply(NamedArray values);
Value linearize_and_adjust(Value target, std::string worlds_axis, std::int64_t reference_index);
Value rewire(std::string worlds_axis, std::int64_t source_index, std::vector<std::int64_t> destination_indices);
Value advance_position_counter(VariablePtr counter, std::string sequence_axis);

// ---- parameter initialization ---------------------------------------------

// Deterministic per-label initialization: each parameter draws from its own
// stream seeded by (seed, label), so values do not depend on build order.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : seed_(seed) {}

  // uniform(+-sqrt(6 / (fan_in + fan_out))) with fans taken from the named axes.
  NamedArray glorot(const std::string& label, const NamedShape& shape, const AxisNames& fan_in_axes,
                    const AxisNames& fan_out_axes) const;
  NamedArray uniform(const std::string& label, const NamedShape& shape, float limit) const;

 private:
  std::uint64_t seed_;
};

// ---- execution -------------------------------------------------------------

// Optional trace of executed primitive kinds, in execution order.
using Trace = std::vector<std::string>;

NamedArray forward(const Value& layer, const NamedArray& x, const SideInputs& side = {},
                   Trace* trace = nullptr);

// logits where kv_pos > query_pos (broadcast by name) become masked_value.
NamedArray apply_causal_mask(const NamedArray& logits, const NamedArray& query_pos, const NamedArray& kv_pos,
                             float masked_value);

// Rotates pairs (i, i + d/2) of `embedding_axis` by position-dependent angles.
NamedArray rope(const NamedArray& x, const NamedArray& positions, const std::string& embedding_axis,
                float max_wavelength);

// Tangents for parameters, keyed by variable label. A tangent may carry extra
// named axes (e.g. one per perturbation direction); they broadcast through.
using ParamTangents = std::map<std::string, NamedArray, std::less<>>;

struct JvpResult {
  NamedArray primal;
  // nullopt means an all-zero tangent.
  std::optional<NamedArray> tangent;
};

// Forward-mode directional derivative along `dx` at `x0`.
std::pair<NamedArray, NamedArray> jvp(const Value& layer, const NamedArray& x0, const NamedArray& dx,
                                      const SideInputs& side = {});

// General form: input and/or parameter tangents.
JvpResult jvp_general(const Value& layer, const NamedArray& x0, const std::optional<NamedArray>& dx,
                      const SideInputs& side, const ParamTangents& param_tangents);

// ---- variables -------------------------------------------------------------

// Every variable replaced by a frozen snapshot sharing its value.
Value freeze(const Value& root);
// Every variable replaced by a new mutable copy; sharing by label is kept.
Value unfreeze(const Value& root);
// Mutable variables copied, frozen ones shared; the copy can be trained
// without touching `root`.
Value clone_mutable(const Value& root);

}  // namespace modelforge::nn
