#include <algorithm>
#include <cstdio>

#include "modelforge/error.hpp"
#include "modelforge/render.hpp"
#include "modelforge/roundtrip.hpp"
#include "modelforge/transformer.hpp"

namespace modelforge::render {

namespace {

std::string short_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string array_summary(const ArrayViz& viz) {
  std::string s = viz.shape;
  if (!viz.stats) return s + " (empty)";
  const auto& st = *viz.stats;
  s += " mean=" + short_number(st.mean) + " std=" + short_number(st.std) + " min=" + short_number(st.min) +
       " max=" + short_number(st.max);
  s += " zeros=" + std::to_string(st.count_zero) + " nonfinite=" + std::to_string(st.count_nonfinite);
  return s;
}

std::string scalar_text(const Value& v) {
  if (v.is_none()) return "None";
  if (v.is_string()) return rt::quote(v.as_string());
  if (v.is_int()) return std::to_string(v.as_int());
  if (v.is_float()) return rt::format_float(v.as_float());
  if (v.is_bool()) return v.as_bool() ? "true" : "false";
  const auto& o = v.as_opaque();
  return "<opaque " + o.type_name + ">";
}

}  // namespace

RenderNode RenderContext::render(const Value& v, const TreePath& path) {
  if (v.is_array()) return render_array(v.as_array(), path);
  if (v.is_node()) {
    const auto& kind = v.as_node()->kind();
    if (const auto* hook = renderer_.find_hook(kind.qualified_name)) {
      RenderNode out = (*hook)(v, path, *this);
      if (!out.path) out.path = path;
      if (out.roundtrip_name.empty()) out.roundtrip_name = kind.qualified_name;
      return out;
    }
  }
  return render_default(v, path);
}

RenderNode RenderContext::render_default(const Value& v, const TreePath& path) {
  RenderNode out;
  out.path = path;
  if (v.is_array()) return render_array_default(v.as_array(), path);
  if (v.is_node()) {
    const auto& node = *v.as_node();
    const void* key = &node;
    if (std::find(stack_.begin(), stack_.end(), key) != stack_.end()) {
      throw PathError("cycle in tree", path.to_string());
    }
    stack_.push_back(key);
    out.kind = RenderNode::Kind::kRecord;
    out.label = node.kind_name();
    out.roundtrip_name = node.kind().qualified_name;
    out.default_expanded = depth_ < options_.expand_depth;
    ++depth_;
    const auto& slots = node.kind().slots;
    for (std::size_t i = 0; i < slots.size(); ++i) {
      RenderNode child = render(node.fields()[i], path.child(slots[i].name));
      child.field = slots[i].name;
      out.children.push_back(std::move(child));
    }
    --depth_;
    stack_.pop_back();
    return out;
  }
  if (v.is_list()) {
    out.kind = RenderNode::Kind::kSequence;
    out.default_expanded = depth_ < options_.expand_depth;
    ++depth_;
    const auto& items = v.as_list();
    for (std::size_t i = 0; i < items.size(); ++i) {
      out.children.push_back(render(items[i], path.child(static_cast<std::int64_t>(i))));
    }
    --depth_;
    return out;
  }
  if (v.is_variable()) {
    const auto& var = *v.as_variable();
    if (seen_vars_.count(var.label())) {
      out.kind = RenderNode::Kind::kLeaf;
      out.label = "VarRef(" + rt::quote(var.label()) + ")";
      out.roundtrip_name = "VarRef";
      return out;
    }
    seen_vars_[var.label()] = true;
    out.kind = RenderNode::Kind::kRecord;
    out.label = std::string(tree::var_kind_name(var.kind()));
    out.roundtrip_name = "Var";
    out.default_expanded = depth_ < options_.expand_depth;
    RenderNode label;
    label.label = rt::quote(var.label());
    label.field = "label";
    RenderNode frozen;
    frozen.label = var.frozen() ? "true" : "false";
    frozen.field = "frozen";
    ++depth_;
    RenderNode value = render_array(var.value(), std::nullopt);
    --depth_;
    value.field = "value";
    out.children = {std::move(label), std::move(frozen), std::move(value)};
    return out;
  }
  out.kind = RenderNode::Kind::kLeaf;
  out.label = scalar_text(v);
  return out;
}

RenderNode RenderContext::render_array(const NamedArray& a, std::optional<TreePath> path) {
  if (const auto* hook = renderer_.find_hook(Renderer::kArrayKind)) {
    RenderNode out = (*hook)(Value(a), path.value_or(TreePath()), *this);
    out.path = path;
    return out;
  }
  return render_array_default(a, std::move(path));
}

RenderNode RenderContext::render_array_default(const NamedArray& a, std::optional<TreePath> path) {
  RenderNode out;
  out.kind = RenderNode::Kind::kArrayViz;
  out.path = std::move(path);
  out.roundtrip_name = "Array";
  auto viz = std::make_shared<ArrayViz>(visualize_array(a, options_.budget));
  out.label = array_summary(*viz);
  out.default_expanded = depth_ < options_.expand_depth;
  out.viz = std::move(viz);
  return out;
}

void Renderer::register_visualizer(std::string_view kind, Hook hook) {
  std::string key(kind);
  if (kind != kArrayKind) {
    models::register_kinds();
    const auto* info = tree::KindRegistry::global().find(kind);
    if (!info) throw KindError("cannot register a visualizer for unknown kind '" + key + "'");
    key = info->qualified_name;
  }
  if (hooks_.count(key)) warnings_.push_back("visualizer for " + key + " replaced");
  hooks_[key] = std::move(hook);
}

const Renderer::Hook* Renderer::find_hook(std::string_view qualified_kind) const {
  auto it = hooks_.find(qualified_kind);
  return it == hooks_.end() ? nullptr : &it->second;
}

RenderNode Renderer::build(const Value& root, const RenderOptions& options) const {
  RenderContext ctx(*this, options);
  return ctx.render(root, TreePath());
}

std::string Renderer::text(const Value& root, const RenderOptions& options) const {
  return to_text(build(root, options));
}

std::string Renderer::html(const Value& root, const RenderOptions& options) const {
  return to_html_document(build(root, options));
}

namespace {

void write_text(std::string& out, const RenderNode& n, int indent) {
  out.append(static_cast<std::size_t>(indent), ' ');
  if (!n.field.empty()) out += n.field + "=";
  switch (n.kind) {
    case RenderNode::Kind::kRecord:
    case RenderNode::Kind::kSequence:
    case RenderNode::Kind::kFoldRegion: {
      const bool seq = n.kind == RenderNode::Kind::kSequence;
      out += seq ? "[" : n.label + "(";
      if (!n.children.empty()) {
        out += '\n';
        for (const auto& c : n.children) {
          write_text(out, c, indent + 2);
          out += ",\n";
        }
        out.append(static_cast<std::size_t>(indent), ' ');
      }
      out += seq ? "]" : ")";
      break;
    }
    case RenderNode::Kind::kArrayViz:
      out += "<" + n.label + ">";
      if (n.viz) {
        for (const auto& notice : n.viz->notices) out += "  # " + notice;
      }
      break;
    case RenderNode::Kind::kLeaf:
      out += n.label;
      break;
  }
}

}  // namespace

std::string to_text(const RenderNode& node) {
  std::string out;
  write_text(out, node, 0);
  return out + "\n";
}

std::string render_text(const Value& root, TextMode mode) {
  if (mode == TextMode::kRoundtrip) return rt::serialize(root);
  return Renderer().text(root);
}

std::string render_html(const Value& root, const RenderOptions& options) {
  return Renderer().html(root, options);
}

}  // namespace modelforge::render
