#pragma once

// Roundtrip text format (.rt): constructor syntax for trees that parses back
// to an equal tree.
//
//   #rtfmt v1
//   modelforge.nn.Sequential(
//     children=[
//       modelforge.nn.Softmax(axes=["kv_seq"])
//     ]
//   )
//
// A variable is written in full as Var(label=..., kind=..., frozen=...,
// value=Array(...)) where it first occurs and as VarRef(label=...) after.

#include <string>
#include <string_view>

#include "modelforge/error.hpp"
#include "modelforge/tree.hpp"

namespace modelforge::rt {

inline constexpr std::string_view kHeader = "#rtfmt v1";

// Canonical document, header line included. Throws KindError for node kinds
// that are not registered.
std::string serialize(const tree::Value& root);

// The header is optional. Throws ParseError.
tree::Value parse(std::string_view doc);

// Shortest decimal that reads back as the same float32; always carries a
// '.', an exponent, or is one of nan, inf, -inf.
std::string format_float(float v);

// JSON-compatible quoting.
std::string quote(std::string_view s);

}  // namespace modelforge::rt
