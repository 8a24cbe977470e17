#include <charconv>
#include <cmath>
#include <set>

#include "modelforge/roundtrip.hpp"

namespace modelforge::rt {

using tree::Node;
using tree::Value;

std::string format_float(float v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, end);
  if (s.find_first_of(".e") == std::string::npos) s += ".0";
  return s;
}

std::string quote(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", static_cast<unsigned>(c));
          out += buf;
        } else {
          out += c;
        }
    }
  }
  return out + "\"";
}

namespace {

bool contains_node(const Value& v) {
  if (v.is_node()) return true;
  if (v.is_list()) {
    for (const auto& item : v.as_list()) {
      if (contains_node(item)) return true;
    }
  }
  return false;
}

void write_array_data(std::string& out, const NamedArray& a, const std::vector<std::int64_t>& dims, std::size_t d,
                      std::int64_t& flat) {
  if (d == dims.size()) {
    if (a.dtype() == DType::kFloat32) {
      out += format_float(a.float_data()[static_cast<std::size_t>(flat)]);
    } else if (a.dtype() == DType::kBool) {
      out += a.int_data()[static_cast<std::size_t>(flat)] ? "true" : "false";
    } else {
      out += std::to_string(a.int_data()[static_cast<std::size_t>(flat)]);
    }
    ++flat;
    return;
  }
  out += '[';
  for (std::int64_t i = 0; i < dims[d]; ++i) {
    if (i) out += ", ";
    write_array_data(out, a, dims, d + 1, flat);
  }
  out += ']';
}

class Writer {
 public:
  std::string take() { return std::move(out_); }

  void value(const Value& v, int indent) {
    switch (v.storage().index()) {
      case 0: out_ += "None"; break;
      case 1: node(*v.as_node(), indent); break;
      case 2: list(v.as_list(), indent); break;
      case 3: array(v.as_array()); break;
      case 4: variable(*v.as_variable()); break;
      case 5: out_ += quote(v.as_string()); break;
      case 6: out_ += std::to_string(v.as_int()); break;
      case 7: out_ += format_float(v.as_float()); break;
      case 8: out_ += v.as_bool() ? "true" : "false"; break;
      default: {
        const auto& o = v.as_opaque();
        out_ += "Opaque(type=" + quote(o.type_name) + ", payload=" + quote(o.payload) + ")";
      }
    }
  }

 private:
  void newline(int indent) {
    out_ += '\n';
    out_.append(static_cast<std::size_t>(indent), ' ');
  }

  void node(const Node& n, int indent) {
    const auto& slots = n.kind().slots;
    out_ += n.kind().qualified_name + "(";
    bool nested = false;
    for (const auto& f : n.fields()) nested = nested || contains_node(f);
    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (i) out_ += ",";
      if (nested) {
        newline(indent + 2);
      } else if (i) {
        out_ += ' ';
      }
      out_ += slots[i].name + "=";
      value(n.fields()[i], indent + 2);
    }
    if (nested) newline(indent);
    out_ += ")";
  }

  void list(const Value::List& items, int indent) {
    bool nested = false;
    for (const auto& item : items) nested = nested || contains_node(item);
    out_ += "[";
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (i) out_ += ",";
      if (nested) {
        newline(indent + 2);
      } else if (i) {
        out_ += ' ';
      }
      value(items[i], indent + 2);
    }
    if (nested && !items.empty()) newline(indent);
    out_ += "]";
  }

  void array(const NamedArray& a) {
    out_ += "Array(dtype=" + std::string(dtype_name(a.dtype())) + ", named={";
    bool first = true;
    std::vector<std::int64_t> dims;
    for (const auto& [name, size] : a.named_shape()) {
      if (!first) out_ += ", ";
      first = false;
      out_ += quote(name) + ": " + std::to_string(size);
      dims.push_back(size);
    }
    out_ += "}, positional=[";
    for (std::size_t i = 0; i < a.positional_shape().size(); ++i) {
      if (i) out_ += ", ";
      out_ += std::to_string(a.positional_shape()[i]);
      dims.push_back(a.positional_shape()[i]);
    }
    out_ += "], data=";
    std::int64_t flat = 0;
    write_array_data(out_, a, dims, 0, flat);
    out_ += ")";
  }

  void variable(const tree::Variable& v) {
    if (!seen_.insert(v.label()).second) {
      out_ += "VarRef(label=" + quote(v.label()) + ")";
      return;
    }
    out_ += "Var(label=" + quote(v.label()) + ", kind=" + std::string(tree::var_kind_name(v.kind())) +
            ", frozen=" + (v.frozen() ? "true" : "false") + ", value=";
    array(v.value());
    out_ += ")";
  }

  std::string out_;
  std::set<std::string, std::less<>> seen_;
};

}  // namespace

std::string serialize(const Value& root) {
  Writer w;
  w.value(root, 0);
  return std::string(kHeader) + "\n" + w.take() + "\n";
}

}  // namespace modelforge::rt
