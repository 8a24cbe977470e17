#include <algorithm>
#include <bit>
#include <set>
#include <unordered_map>

#include "modelforge/error.hpp"
#include "modelforge/tree.hpp"

namespace modelforge::tree {

std::string_view var_kind_name(VarKind kind) {
  return kind == VarKind::kParameter ? "Parameter" : "StateVariable";
}

Variable::Variable(std::string label, VarKind kind, NamedArray value, bool frozen)
    : label_(std::move(label)), kind_(kind), value_(std::move(value)), frozen_(frozen) {
  if (label_.empty()) throw KindError("variable labels must be non-empty");
}

void Variable::set_value(NamedArray value) {
  if (frozen_) throw FrozenVariableError(label_);
  value_ = std::move(value);
}

VariablePtr make_parameter(std::string label, NamedArray value) {
  return std::make_shared<Variable>(std::move(label), VarKind::kParameter, std::move(value));
}

VariablePtr make_state(std::string label, NamedArray value) {
  return std::make_shared<Variable>(std::move(label), VarKind::kStateVariable, std::move(value));
}

namespace {

std::mutex& opaque_mu() {
  static std::mutex mu;
  return mu;
}

std::map<std::string, std::function<bool(const Opaque&, const Opaque&)>>& opaque_hooks() {
  static std::map<std::string, std::function<bool(const Opaque&, const Opaque&)>> hooks;
  return hooks;
}

bool opaque_equal(const Opaque& a, const Opaque& b) {
  if (a.type_name != b.type_name) return false;
  std::function<bool(const Opaque&, const Opaque&)> hook;
  {
    std::lock_guard lock(opaque_mu());
    auto it = opaque_hooks().find(a.type_name);
    if (it != opaque_hooks().end()) hook = it->second;
  }
  return hook ? hook(a, b) : a.payload == b.payload;
}

template <typename T>
const T& get_or_throw(const Value::Storage& s, const char* expected, const Value& v) {
  if (const T* p = std::get_if<T>(&s)) return *p;
  throw KindError(std::string("expected ") + expected + ", got " + v.type_name());
}

}  // namespace

void register_opaque_equality(const std::string& type_name,
                              std::function<bool(const Opaque&, const Opaque&)> eq) {
  std::lock_guard lock(opaque_mu());
  opaque_hooks()[type_name] = std::move(eq);
}

const NodePtr& Value::as_node() const { return get_or_throw<NodePtr>(storage_, "node", *this); }
const Value::List& Value::as_list() const { return get_or_throw<List>(storage_, "list", *this); }
const NamedArray& Value::as_array() const { return get_or_throw<NamedArray>(storage_, "array", *this); }
const VariablePtr& Value::as_variable() const { return get_or_throw<VariablePtr>(storage_, "variable", *this); }
const std::string& Value::as_string() const { return get_or_throw<std::string>(storage_, "string", *this); }
std::int64_t Value::as_int() const { return get_or_throw<std::int64_t>(storage_, "int", *this); }
float Value::as_float() const {
  if (is_int()) return static_cast<float>(as_int());
  return get_or_throw<float>(storage_, "float", *this);
}
bool Value::as_bool() const { return get_or_throw<bool>(storage_, "bool", *this); }
const Opaque& Value::as_opaque() const { return get_or_throw<Opaque>(storage_, "opaque", *this); }

std::string Value::type_name() const {
  switch (storage_.index()) {
    case 0:
      return "none";
    case 1:
      return "node " + std::get<NodePtr>(storage_)->kind_name();
    case 2:
      return "list";
    case 3:
      return "array";
    case 4:
      return "variable";
    case 5:
      return "string";
    case 6:
      return "int";
    case 7:
      return "float";
    case 8:
      return "bool";
    case 9:
      return "opaque " + std::get<Opaque>(storage_).type_name;
  }
  return "unknown";
}

int KindInfo::slot_index(std::string_view slot) const {
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].name == slot) return static_cast<int>(i);
  }
  return -1;
}

KindRegistry& KindRegistry::global() {
  static KindRegistry registry;
  return registry;
}

const KindInfo& KindRegistry::add(KindInfo info) {
  std::lock_guard lock(mu_);
  if (info.name.empty() || info.qualified_name.empty()) throw KindError("kind names must be non-empty");
  if (by_qualified_.contains(info.qualified_name)) {
    throw KindError("kind '" + info.qualified_name + "' is already registered");
  }
  std::set<std::string> slot_names;
  for (const auto& slot : info.slots) {
    if (!slot_names.insert(slot.name).second) {
      throw KindError("kind '" + info.qualified_name + "' repeats slot '" + slot.name + "'");
    }
  }
  auto owned = std::make_unique<KindInfo>(std::move(info));
  const KindInfo* raw = owned.get();
  by_short_[raw->name].push_back(raw);
  by_qualified_.emplace(raw->qualified_name, std::move(owned));
  return *raw;
}

const KindInfo* KindRegistry::find(std::string_view name) const {
  std::lock_guard lock(mu_);
  if (auto it = by_qualified_.find(name); it != by_qualified_.end()) return it->second.get();
  if (auto it = by_short_.find(name); it != by_short_.end() && it->second.size() == 1) {
    return it->second.front();
  }
  return nullptr;
}

const KindInfo& KindRegistry::get(std::string_view name) const {
  if (const KindInfo* kind = find(name)) return *kind;
  throw KindError("unknown kind '" + std::string(name) + "'");
}

bool KindRegistry::is_subkind(const KindInfo& kind, std::string_view base) const {
  const KindInfo* k = &kind;
  for (int depth = 0; k != nullptr && depth < 64; ++depth) {
    if (k->name == base || k->qualified_name == base) return true;
    if (k->base.empty()) return false;
    k = find(k->base);
  }
  return false;
}

std::vector<std::string> KindRegistry::qualified_names() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [name, _] : by_qualified_) out.push_back(name);
  return out;
}

namespace {

void check_slot(const KindInfo& kind, const SlotSpec& slot, const Value& v) {
  auto fail = [&](const char* expected) {
    throw KindError(kind.name + "." + slot.name + " expects " + expected + ", got " + v.type_name());
  };
  auto list_of = [&](auto pred, const char* expected) {
    if (!v.is_list()) fail(expected);
    for (const auto& item : v.as_list()) {
      if (!pred(item)) fail(expected);
    }
  };
  switch (slot.type) {
    case SlotType::kNode:
      if (!v.is_node()) fail("a node");
      break;
    case SlotType::kNodeList:
      list_of([](const Value& x) { return x.is_node(); }, "a list of nodes");
      break;
    case SlotType::kInt:
      if (!v.is_int()) fail("an int");
      break;
    case SlotType::kFloat:
      if (!v.is_float()) fail("a float");
      break;
    case SlotType::kBool:
      if (!v.is_bool()) fail("a bool");
      break;
    case SlotType::kString:
      if (!v.is_string()) fail("a string");
      break;
    case SlotType::kStringList:
      list_of([](const Value& x) { return x.is_string(); }, "a list of strings");
      break;
    case SlotType::kIntList:
      list_of([](const Value& x) { return x.is_int(); }, "a list of ints");
      break;
    case SlotType::kArray:
      if (!v.is_array()) fail("an array");
      break;
    case SlotType::kVariable:
      if (!v.is_variable()) fail("a variable");
      break;
    case SlotType::kAny:
      break;
  }
}

}  // namespace

Node::Node(const KindInfo& kind, std::vector<Value> fields) : kind_(&kind), fields_(std::move(fields)) {
  if (fields_.size() != kind.slots.size()) {
    throw KindError(kind.name + " expects " + std::to_string(kind.slots.size()) + " fields, got " +
                    std::to_string(fields_.size()));
  }
  for (std::size_t i = 0; i < fields_.size(); ++i) check_slot(kind, kind.slots[i], fields_[i]);
}

NodePtr Node::make(std::string_view kind_name, std::vector<std::pair<std::string, Value>> fields) {
  const KindInfo& kind = KindRegistry::global().get(kind_name);
  std::vector<Value> ordered(kind.slots.size());
  std::vector<bool> seen(kind.slots.size(), false);
  for (auto& [name, value] : fields) {
    const int idx = kind.slot_index(name);
    if (idx < 0) throw KindError(kind.name + " has no field '" + name + "'");
    if (seen[static_cast<std::size_t>(idx)]) throw KindError(kind.name + " field '" + name + "' given twice");
    seen[static_cast<std::size_t>(idx)] = true;
    ordered[static_cast<std::size_t>(idx)] = std::move(value);
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) throw KindError(kind.name + " is missing field '" + kind.slots[i].name + "'");
  }
  return std::make_shared<const Node>(kind, std::move(ordered));
}

bool Node::is(std::string_view kind) const { return KindRegistry::global().is_subkind(*kind_, kind); }

const Value& Node::field(std::string_view name) const {
  const int idx = kind_->slot_index(name);
  if (idx < 0) throw KindError(kind_->name + " has no field '" + std::string(name) + "'");
  return fields_[static_cast<std::size_t>(idx)];
}

NodePtr Node::with_field(std::string_view name, Value value) const {
  const int idx = kind_->slot_index(name);
  if (idx < 0) throw KindError(kind_->name + " has no field '" + std::string(name) + "'");
  std::vector<Value> fields = fields_;
  fields[static_cast<std::size_t>(idx)] = std::move(value);
  return std::make_shared<const Node>(*kind_, std::move(fields));
}

NodePtr Node::with_fields(std::vector<Value> fields) const {
  return std::make_shared<const Node>(*kind_, std::move(fields));
}

std::vector<std::pair<PathStep, const Value*>> children(const Value& v) {
  std::vector<std::pair<PathStep, const Value*>> out;
  if (v.is_node()) {
    const Node& node = *v.as_node();
    for (std::size_t i = 0; i < node.fields().size(); ++i) {
      out.emplace_back(node.kind().slots[i].name, &node.fields()[i]);
    }
  } else if (v.is_list()) {
    const auto& list = v.as_list();
    for (std::size_t i = 0; i < list.size(); ++i) out.emplace_back(static_cast<std::int64_t>(i), &list[i]);
  }
  return out;
}

Value rebuild(const Value& v, std::vector<Value> new_children) {
  if (v.is_node()) return Value(v.as_node()->with_fields(std::move(new_children)));
  if (v.is_list()) return Value(Value::List(std::move(new_children)));
  if (!new_children.empty()) throw KindError("cannot rebuild a leaf with children");
  return v;
}

namespace {

const Value* step_into(const Value& v, const PathStep& step) {
  if (const auto* field = std::get_if<std::string>(&step)) {
    if (!v.is_node()) return nullptr;
    const Node& node = *v.as_node();
    const int idx = node.kind().slot_index(*field);
    if (idx < 0) return nullptr;
    return &node.fields()[static_cast<std::size_t>(idx)];
  }
  const std::int64_t index = std::get<std::int64_t>(step);
  if (!v.is_list()) return nullptr;
  const auto& list = v.as_list();
  if (index < 0 || index >= static_cast<std::int64_t>(list.size())) return nullptr;
  return &list[static_cast<std::size_t>(index)];
}

}  // namespace

Value resolve(const Value& root, const TreePath& path) {
  const Value* cur = &root;
  for (std::size_t i = 0; i < path.size(); ++i) {
    cur = step_into(*cur, path.steps()[i]);
    if (cur == nullptr) {
      throw PathError("path does not resolve", path.to_string());
    }
  }
  return *cur;
}

bool resolves(const Value& root, const TreePath& path) {
  const Value* cur = &root;
  for (const auto& step : path.steps()) {
    cur = step_into(*cur, step);
    if (cur == nullptr) return false;
  }
  return true;
}

namespace {

Value replace_rec(const Value& cur, const TreePath& path, std::size_t depth, Value& replacement) {
  if (depth == path.size()) return std::move(replacement);
  const PathStep& step = path.steps()[depth];
  if (const auto* field = std::get_if<std::string>(&step)) {
    if (!cur.is_node()) throw PathError("field step into a non-node", path.to_string());
    const Node& node = *cur.as_node();
    const int idx = node.kind().slot_index(*field);
    if (idx < 0) throw PathError(node.kind_name() + " has no field '" + *field + "'", path.to_string());
    std::vector<Value> fields(node.fields().begin(), node.fields().end());
    fields[static_cast<std::size_t>(idx)] =
        replace_rec(fields[static_cast<std::size_t>(idx)], path, depth + 1, replacement);
    return Value(node.with_fields(std::move(fields)));
  }
  const std::int64_t index = std::get<std::int64_t>(step);
  if (!cur.is_list()) throw PathError("index step into a non-list", path.to_string());
  Value::List list = cur.as_list();
  if (index < 0 || index >= static_cast<std::int64_t>(list.size())) {
    throw PathError("list index out of range", path.to_string());
  }
  list[static_cast<std::size_t>(index)] =
      replace_rec(list[static_cast<std::size_t>(index)], path, depth + 1, replacement);
  return Value(std::move(list));
}

void visit_rec(const Value& v, TreePath& path,
               const std::function<bool(const TreePath&, const Value&)>& fn) {
  if (!fn(path, v)) return;
  for (const auto& [step, child] : children(v)) {
    TreePath next = std::holds_alternative<std::string>(step) ? path.child(std::get<std::string>(step))
                                                               : path.child(std::get<std::int64_t>(step));
    visit_rec(*child, next, fn);
  }
}

}  // namespace

Value replace_at(const Value& root, const TreePath& path, Value replacement) {
  return replace_rec(root, path, 0, replacement);
}

void visit(const Value& root, const std::function<bool(const TreePath&, const Value&)>& fn) {
  TreePath path;
  visit_rec(root, path, fn);
}

bool structurally_equal(const Value& a, const Value& b) {
  if (a.storage().index() != b.storage().index()) return false;
  if (a.is_none()) return true;
  if (a.is_node()) {
    const Node& x = *a.as_node();
    const Node& y = *b.as_node();
    if (&x.kind() != &y.kind()) return false;
    for (std::size_t i = 0; i < x.fields().size(); ++i) {
      if (!structurally_equal(x.fields()[i], y.fields()[i])) return false;
    }
    return true;
  }
  if (a.is_list()) {
    const auto& x = a.as_list();
    const auto& y = b.as_list();
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!structurally_equal(x[i], y[i])) return false;
    }
    return true;
  }
  if (a.is_array()) return bitwise_equal(a.as_array(), b.as_array());
  if (a.is_variable()) {
    const Variable& x = *a.as_variable();
    const Variable& y = *b.as_variable();
    return x.label() == y.label() && x.kind() == y.kind() && x.frozen() == y.frozen() &&
           bitwise_equal(x.value(), y.value());
  }
  if (a.is_string()) return a.as_string() == b.as_string();
  if (a.is_int()) return a.as_int() == b.as_int();
  if (a.is_float()) return std::bit_cast<std::uint32_t>(a.as_float()) == std::bit_cast<std::uint32_t>(b.as_float());
  if (a.is_bool()) return a.as_bool() == b.as_bool();
  return opaque_equal(a.as_opaque(), b.as_opaque());
}

std::vector<VariablePtr> variables(const Value& root) {
  std::vector<VariablePtr> out;
  std::set<std::string> seen;
  visit(root, [&](const TreePath&, const Value& v) {
    if (v.is_variable() && seen.insert(v.as_variable()->label()).second) out.push_back(v.as_variable());
    return true;
  });
  return out;
}

namespace {

Value map_vars_rec(const Value& v, std::map<std::string, VariablePtr>& memo,
                   const std::function<VariablePtr(const VariablePtr&)>& fn) {
  if (v.is_variable()) {
    const auto& var = v.as_variable();
    auto it = memo.find(var->label());
    if (it == memo.end()) it = memo.emplace(var->label(), fn(var)).first;
    return Value(it->second);
  }
  auto kids = children(v);
  if (kids.empty()) return v;
  std::vector<Value> rebuilt;
  rebuilt.reserve(kids.size());
  for (const auto& [_, child] : kids) rebuilt.push_back(map_vars_rec(*child, memo, fn));
  return rebuild(v, std::move(rebuilt));
}

}  // namespace

Value map_variables(const Value& root, const std::function<VariablePtr(const VariablePtr&)>& fn) {
  std::map<std::string, VariablePtr> memo;
  return map_vars_rec(root, memo, fn);
}

std::size_t count_nodes(const Value& root) {
  std::size_t n = 0;
  visit(root, [&](const TreePath&, const Value& v) {
    if (v.is_node()) ++n;
    return true;
  });
  return n;
}

}  // namespace modelforge::tree
