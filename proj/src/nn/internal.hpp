#pragma once

#include <string>
#include <string_view>

#include "modelforge/error.hpp"
#include "modelforge/nn.hpp"

namespace modelforge::nn::detail {

// Short name of the built-in kind `kind` is (or derives from); throws
// KindError for kinds with no built-in ancestor.
const std::string& builtin_name(const tree::KindInfo& kind);

bool known_elementwise(std::string_view fn);
float elementwise_value(std::string_view fn, float x);
float elementwise_derivative(std::string_view fn, float x);

AxisNames strings_of(const Value& list);

inline const NamedArray& side_input(const SideInputs& side, std::string_view name) {
  auto it = side.find(name);
  if (it == side.end()) throw ForwardError("missing side input '" + std::string(name) + "'");
  return it->second;
}

// Float one-hot {token axes..., vocab_axis: vocab}; ForwardError on out-of-range ids.
NamedArray one_hot(const NamedArray& tokens, const std::string& vocab_axis, std::int64_t vocab);

// Axes of the table other than the vocabulary axis.
AxisNames table_feature_axes(const NamedArray& table, const std::string& vocab_axis);

// Mean/variance normalization (or RMS when rms is true) over one axis.
NamedArray normalize(const NamedArray& x, const std::string& axis, float epsilon, bool rms);

NamedArray rewire_slices(const NamedArray& x, const std::string& worlds_axis, std::int64_t source,
                         const std::vector<std::int64_t>& destinations);

}  // namespace modelforge::nn::detail
