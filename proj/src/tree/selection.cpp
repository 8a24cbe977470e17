#include "modelforge/selection.hpp"

#include <algorithm>
#include <map>

#include "modelforge/error.hpp"

namespace modelforge::tree {

Selection::Selection(Value root, std::vector<TreePath> paths)
    : root_(std::move(root)), paths_(std::move(paths)) {
  for (const auto& path : paths_) {
    if (!resolves(root_, path)) throw PathError("selected path does not resolve", path.to_string());
  }
}

Selection select(Value root) { return Selection(std::move(root), {TreePath()}); }

bool Selection::is_nested() const {
  for (std::size_t i = 0; i < paths_.size(); ++i) {
    for (std::size_t j = 0; j < paths_.size(); ++j) {
      if (i != j && paths_[i].is_prefix_of(paths_[j])) return true;
    }
  }
  return false;
}

void Selection::require_disjoint() const {
  for (std::size_t i = 0; i < paths_.size(); ++i) {
    for (std::size_t j = 0; j < paths_.size(); ++j) {
      if (i != j && paths_[i].is_prefix_of(paths_[j])) {
        throw PathError("cannot rewrite nested selections; " + paths_[j].to_string() + " lies inside",
                        paths_[i].to_string());
      }
    }
  }
}

Value Selection::get() const {
  if (paths_.size() != 1) {
    throw PathError("get() requires exactly one selected subtree, have " + std::to_string(paths_.size()), "");
  }
  return resolve(root_, paths_.front());
}

std::vector<Value> Selection::get_all() const {
  std::vector<Value> out;
  out.reserve(paths_.size());
  for (const auto& path : paths_) out.push_back(resolve(root_, path));
  return out;
}

Selection Selection::at_subtrees_where(const std::function<bool(const Value&)>& pred) const {
  std::vector<TreePath> found;
  for (const auto& base : paths_) {
    visit(resolve(root_, base), [&](const TreePath& rel, const Value& v) {
      if (!pred(v)) return true;
      TreePath full = base.concat(rel);
      const bool covered = std::any_of(found.begin(), found.end(),
                                       [&](const TreePath& p) { return p.is_prefix_of(full); });
      if (!covered) found.push_back(std::move(full));
      return false;
    });
  }
  return Selection(root_, std::move(found));
}

Selection Selection::at_instances_of(std::string_view kind) const {
  if (KindRegistry::global().find(kind) == nullptr) {
    throw KindError("at_instances_of: unknown kind '" + std::string(kind) + "'");
  }
  return at_subtrees_where([kind](const Value& v) { return v.is_node() && v.as_node()->is(kind); });
}

Selection Selection::at(const TreePath& path) const {
  std::vector<TreePath> out;
  out.reserve(paths_.size());
  for (const auto& base : paths_) {
    TreePath full = base.concat(path);
    if (!resolves(root_, full)) throw PathError("at(): path does not resolve", full.to_string());
    out.push_back(std::move(full));
  }
  return Selection(root_, std::move(out));
}

Selection Selection::where(const std::function<bool(const Value&)>& pred) const {
  std::vector<TreePath> out;
  for (const auto& path : paths_) {
    if (pred(resolve(root_, path))) out.push_back(path);
  }
  return Selection(root_, std::move(out));
}

Value Selection::apply(const std::function<Value(const Value&)>& fn) const {
  require_disjoint();
  Value out = root_;
  for (const auto& path : paths_) {
    Value replacement;
    try {
      replacement = fn(resolve(root_, path));
    } catch (const PathError&) {
      throw;
    } catch (const std::exception& e) {
      throw PathError(std::string("rewrite failed: ") + e.what(), path.to_string());
    }
    out = replace_at(out, path, std::move(replacement));
  }
  return out;
}

Value Selection::set(const Value& replacement) const {
  return apply([&](const Value&) { return replacement; });
}

Value Selection::insert_after(const Value& node) const { return insert(node, true); }

Value Selection::insert_before(const Value& node) const { return insert(node, false); }

Value Selection::insert(const Value& node, bool after) const {
  require_disjoint();
  std::map<TreePath, std::vector<std::int64_t>> by_parent;
  for (const auto& path : paths_) {
    if (path.empty() || !std::holds_alternative<std::int64_t>(path.back())) {
      throw PathError("insertion target is not an element of a sequence", path.to_string());
    }
    by_parent[path.parent()].push_back(std::get<std::int64_t>(path.back()));
  }
  std::vector<std::pair<TreePath, std::vector<std::int64_t>>> groups(by_parent.begin(), by_parent.end());
  // Deeper lists first so indices in shallower paths stay valid.
  std::stable_sort(groups.begin(), groups.end(),
                   [](const auto& a, const auto& b) { return a.first.size() > b.first.size(); });
  Value out = root_;
  for (auto& [parent, indices] : groups) {
    const Value list_value = resolve(out, parent);
    if (!list_value.is_list()) throw PathError("insertion target's parent is not a sequence", parent.to_string());
    std::sort(indices.begin(), indices.end());
    const auto& list = list_value.as_list();
    Value::List rebuilt;
    rebuilt.reserve(list.size() + indices.size());
    for (std::size_t i = 0; i < list.size(); ++i) {
      const bool hit = std::binary_search(indices.begin(), indices.end(), static_cast<std::int64_t>(i));
      if (hit && !after) rebuilt.push_back(node);
      rebuilt.push_back(list[i]);
      if (hit && after) rebuilt.push_back(node);
    }
    out = replace_at(out, parent, Value(std::move(rebuilt)));
  }
  return out;
}

}  // namespace modelforge::tree
