#pragma once

// Selector engine: pick subtrees of a tree by kind, path, or predicate, then
// rebuild the tree with those subtrees rewritten.
//
//   select(model).at_instances_of("Attention").at_instances_of("Softmax").insert_after(probe)
//
// Selected paths are kept in depth-first pre-order. Selectors that could
// match both an ancestor and one of its descendants keep only the shallowest
// match; rewrites reject selections that are nested anyway.

#include <functional>
#include <string_view>
#include <vector>

#include "modelforge/tree.hpp"

namespace modelforge::tree {

class Selection {
 public:
  Selection(Value root, std::vector<TreePath> paths);

  const Value& root() const { return root_; }
  const std::vector<TreePath>& paths() const { return paths_; }
  std::size_t count() const { return paths_.size(); }
  bool is_nested() const;

  // Requires exactly one selected path.
  Value get() const;
  std::vector<Value> get_all() const;

  Selection at_instances_of(std::string_view kind) const;
  Selection at_subtrees_where(const std::function<bool(const Value&)>& pred) const;
  Selection at(const TreePath& path) const;
  // Keeps the selected subtrees for which `pred` holds.
  Selection where(const std::function<bool(const Value&)>& pred) const;

  Value apply(const std::function<Value(const Value&)>& fn) const;
  Value set(const Value& replacement) const;
  Value insert_after(const Value& node) const;
  Value insert_before(const Value& node) const;

 private:
  Value insert(const Value& node, bool after) const;
  void require_disjoint() const;

  Value root_;
  std::vector<TreePath> paths_;
};

Selection select(Value root);

}  // namespace modelforge::tree
