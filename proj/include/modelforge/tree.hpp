#pragma once

// Generic tree values and the node-kind registry.
//
// A tree is a Value: a node (kind + ordered fields), a list, or a leaf
// (array, variable, string, number, bool, opaque). Nodes are immutable and
// held by shared_ptr, so rewrites copy the path to the root and share every
// untouched sibling. Variables are the one mutable thing reachable from a
// tree; they are shared slots identified by label.

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "modelforge/named_array.hpp"

namespace modelforge::tree {

enum class VarKind { kParameter, kStateVariable };

std::string_view var_kind_name(VarKind kind);

class Variable {
 public:
  Variable(std::string label, VarKind kind, NamedArray value, bool frozen = false);

  const std::string& label() const { return label_; }
  VarKind kind() const { return kind_; }
  bool frozen() const { return frozen_; }
  const NamedArray& value() const { return value_; }
  // Throws FrozenVariableError on a frozen variable.
  void set_value(NamedArray value);

 private:
  std::string label_;
  VarKind kind_;
  NamedArray value_;
  bool frozen_;
};

using VariablePtr = std::shared_ptr<Variable>;

VariablePtr make_parameter(std::string label, NamedArray value);
VariablePtr make_state(std::string label, NamedArray value);

// A value the registry knows nothing about. Compared with a registered
// equality hook for its type name, or bytewise otherwise.
struct Opaque {
  std::string type_name;
  std::string payload;
};

void register_opaque_equality(const std::string& type_name,
                              std::function<bool(const Opaque&, const Opaque&)> eq);

class Node;
using NodePtr = std::shared_ptr<const Node>;

class Value {
 public:
  using List = std::vector<Value>;
  using Storage = std::variant<std::monostate, NodePtr, List, NamedArray, VariablePtr, std::string,
                               std::int64_t, float, bool, Opaque>;

  Value() = default;
  Value(NodePtr node) : storage_(std::move(node)) {}
  Value(List list) : storage_(std::move(list)) {}
  Value(NamedArray array) : storage_(std::move(array)) {}
  Value(VariablePtr var) : storage_(std::move(var)) {}
  Value(std::string s) : storage_(std::move(s)) {}
  Value(const char* s) : storage_(std::string(s)) {}
  Value(std::int64_t i) : storage_(i) {}
  Value(int i) : storage_(static_cast<std::int64_t>(i)) {}
  Value(float f) : storage_(f) {}
  Value(double f) : storage_(static_cast<float>(f)) {}
  Value(bool b) : storage_(b) {}
  Value(Opaque o) : storage_(std::move(o)) {}

  const Storage& storage() const { return storage_; }

  bool is_none() const { return std::holds_alternative<std::monostate>(storage_); }
  bool is_node() const { return std::holds_alternative<NodePtr>(storage_); }
  bool is_list() const { return std::holds_alternative<List>(storage_); }
  bool is_array() const { return std::holds_alternative<NamedArray>(storage_); }
  bool is_variable() const { return std::holds_alternative<VariablePtr>(storage_); }
  bool is_string() const { return std::holds_alternative<std::string>(storage_); }
  bool is_int() const { return std::holds_alternative<std::int64_t>(storage_); }
  bool is_float() const { return std::holds_alternative<float>(storage_); }
  bool is_bool() const { return std::holds_alternative<bool>(storage_); }
  bool is_opaque() const { return std::holds_alternative<Opaque>(storage_); }

  // Accessors throw KindError on a type mismatch.
  const NodePtr& as_node() const;
  const List& as_list() const;
  const NamedArray& as_array() const;
  const VariablePtr& as_variable() const;
  const std::string& as_string() const;
  std::int64_t as_int() const;
  float as_float() const;
  bool as_bool() const;
  const Opaque& as_opaque() const;

  // Short description of the held alternative, for error messages.
  std::string type_name() const;

 private:
  Storage storage_;
};

enum class SlotType { kNode, kNodeList, kInt, kFloat, kBool, kString, kStringList, kIntList, kArray, kVariable, kAny };

struct SlotSpec {
  std::string name;
  SlotType type;
};

struct KindInfo {
  std::string name;            // short name, e.g. "Linear"
  std::string qualified_name;  // e.g. "modelforge.nn.Linear"
  std::vector<SlotSpec> slots;
  // Short or qualified name of the kind this one is registered as a subkind of.
  std::string base;

  // -1 when absent.
  int slot_index(std::string_view slot) const;
};

class KindRegistry {
 public:
  static KindRegistry& global();

  // Throws KindError when the qualified name is already taken.
  const KindInfo& add(KindInfo info);
  // Accepts short or qualified names; nullptr when unknown or ambiguous.
  const KindInfo* find(std::string_view name) const;
  const KindInfo& get(std::string_view name) const;
  // True when `kind` is `base` or reaches it through registered base links.
  bool is_subkind(const KindInfo& kind, std::string_view base) const;
  std::vector<std::string> qualified_names() const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::unique_ptr<KindInfo>, std::less<>> by_qualified_;
  std::map<std::string, std::vector<const KindInfo*>, std::less<>> by_short_;
};

class Node {
 public:
  // Fields in slot order; validated against the kind's slot types.
  Node(const KindInfo& kind, std::vector<Value> fields);

  static NodePtr make(std::string_view kind, std::vector<std::pair<std::string, Value>> fields);

  const KindInfo& kind() const { return *kind_; }
  const std::string& kind_name() const { return kind_->name; }
  bool is(std::string_view kind) const;
  const Value& field(std::string_view name) const;
  std::span<const Value> fields() const { return fields_; }
  NodePtr with_field(std::string_view name, Value value) const;
  NodePtr with_fields(std::vector<Value> fields) const;

 private:
  const KindInfo* kind_;
  std::vector<Value> fields_;
};

// One step of a path: a field name or a list index.
using PathStep = std::variant<std::string, std::int64_t>;

class TreePath {
 public:
  TreePath() = default;
  explicit TreePath(std::vector<PathStep> steps) : steps_(std::move(steps)) {}

  const std::vector<PathStep>& steps() const { return steps_; }
  bool empty() const { return steps_.empty(); }
  std::size_t size() const { return steps_.size(); }
  TreePath child(std::string field) const;
  TreePath child(std::int64_t index) const;
  TreePath parent() const;
  const PathStep& back() const { return steps_.back(); }
  TreePath concat(const TreePath& tail) const;
  // Proper or improper prefix.
  bool is_prefix_of(const TreePath& other) const;

  // `root.field[index].field`; the root token defaults to "model".
  std::string to_string(std::string_view root = "model") const;
  // Accepts any leading identifier as the root token.
  static TreePath parse(std::string_view text);

  friend bool operator==(const TreePath&, const TreePath&) = default;
  friend std::strong_ordering operator<=>(const TreePath& a, const TreePath& b);

 private:
  std::vector<PathStep> steps_;
};

// Immediate children of a node (its fields) or list (its elements).
std::vector<std::pair<PathStep, const Value*>> children(const Value& v);
// Same shape as `v` with its children replaced, in children() order.
Value rebuild(const Value& v, std::vector<Value> new_children);

Value resolve(const Value& root, const TreePath& path);
bool resolves(const Value& root, const TreePath& path);
// Copy-on-write replacement of the subtree at `path`.
Value replace_at(const Value& root, const TreePath& path, Value replacement);

// Pre-order walk. Returning false from `fn` skips the node's descendants.
void visit(const Value& root, const std::function<bool(const TreePath&, const Value&)>& fn);

// Structural equality; variables compare by label, kind, frozen flag, and
// value bits.
bool structurally_equal(const Value& a, const Value& b);

// Each distinct variable (by label) in pre-order.
std::vector<VariablePtr> variables(const Value& root);
// Rebuilds the tree with every variable passed through `fn`; occurrences of
// the same label map through a single call so sharing is preserved.
Value map_variables(const Value& root, const std::function<VariablePtr(const VariablePtr&)>& fn);

std::size_t count_nodes(const Value& root);

}  // namespace modelforge::tree
