#include "modelforge/nn.hpp"

namespace modelforge::nn {

using tree::Variable;

Value freeze(const Value& root) {
  return tree::map_variables(root, [](const VariablePtr& v) {
    if (v->frozen()) return v;
    return std::make_shared<Variable>(v->label(), v->kind(), v->value(), true);
  });
}

Value unfreeze(const Value& root) {
  return tree::map_variables(root, [](const VariablePtr& v) {
    return std::make_shared<Variable>(v->label(), v->kind(), v->value(), false);
  });
}

Value clone_mutable(const Value& root) {
  return tree::map_variables(root, [](const VariablePtr& v) {
    if (v->frozen()) return v;
    return std::make_shared<Variable>(v->label(), v->kind(), v->value(), false);
  });
}

}  // namespace modelforge::nn
