#include <charconv>
#include <cmath>
#include <limits>
#include <map>

#include "modelforge/roundtrip.hpp"
#include "modelforge/transformer.hpp"

namespace modelforge::rt {

using tree::KindRegistry;
using tree::Node;
using tree::SlotType;
using tree::Value;
using tree::VariablePtr;

namespace {

enum class Tok { kIdent, kInt, kFloat, kString, kPunct, kEnd };

struct Token {
  Tok type;
  std::string text;
  std::size_t line;
  std::size_t col;
};

std::string describe(const Token& t) {
  switch (t.type) {
    case Tok::kEnd: return "end of input";
    case Tok::kString: return "string " + quote(t.text);
    default: return "'" + t.text + "'";
  }
}

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.'; }
bool digit(char c) { return c >= '0' && c <= '9'; }

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    if (src_.starts_with("#")) header();
    while (true) {
      skip_space();
      if (pos_ >= src_.size()) {
        out.push_back({Tok::kEnd, "", line_, col_});
        return out;
      }
      out.push_back(next());
    }
  }

 private:
  [[noreturn]] void fail(const std::string& msg, std::size_t line, std::size_t col) {
    throw ParseError(msg, line, col);
  }

  void header() {
    const std::size_t end = src_.find('\n');
    const std::string_view line = src_.substr(0, end);
    std::string_view trimmed = line;
    while (!trimmed.empty() && (trimmed.back() == '\r' || trimmed.back() == ' ')) trimmed.remove_suffix(1);
    if (trimmed != kHeader) fail("unsupported header '" + std::string(line) + "'", 1, 1);
    advance(line.size());
  }

  void advance(std::size_t n) {
    for (std::size_t i = 0; i < n && pos_ < src_.size(); ++i, ++pos_) {
      if (src_[pos_] == '\n') {
        ++line_;
        col_ = 1;
      } else {
        ++col_;
      }
    }
  }

  void skip_space() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) advance(1);
  }

  Token next() {
    const std::size_t line = line_, col = col_;
    const char c = src_[pos_];
    if (std::string_view("()[]{},=:").find(c) != std::string_view::npos) {
      advance(1);
      return {Tok::kPunct, std::string(1, c), line, col};
    }
    if (c == '"') return string_token(line, col);
    if (ident_start(c)) {
      std::size_t end = pos_;
      while (end < src_.size() && ident_char(src_[end])) ++end;
      std::string text(src_.substr(pos_, end - pos_));
      advance(end - pos_);
      return {Tok::kIdent, text, line, col};
    }
    if (digit(c) || c == '-') return number(line, col);
    fail(std::string("unexpected character '") + c + "'", line, col);
  }

  Token number(std::size_t line, std::size_t col) {
    std::size_t end = pos_;
    if (src_[end] == '-') ++end;
    if (src_.substr(end).starts_with("inf") && (end + 3 >= src_.size() || !ident_char(src_[end + 3]))) {
      advance(end + 3 - pos_);
      return {Tok::kFloat, "-inf", line, col};
    }
    if (end >= src_.size() || !digit(src_[end])) fail("malformed number", line, col);
    bool is_float = false;
    while (end < src_.size() && digit(src_[end])) ++end;
    if (end < src_.size() && src_[end] == '.') {
      is_float = true;
      ++end;
      if (end >= src_.size() || !digit(src_[end])) fail("malformed number", line, col);
      while (end < src_.size() && digit(src_[end])) ++end;
    }
    if (end < src_.size() && (src_[end] == 'e' || src_[end] == 'E')) {
      is_float = true;
      ++end;
      if (end < src_.size() && (src_[end] == '+' || src_[end] == '-')) ++end;
      if (end >= src_.size() || !digit(src_[end])) fail("malformed number", line, col);
      while (end < src_.size() && digit(src_[end])) ++end;
    }
    if (end < src_.size() && ident_char(src_[end])) fail("malformed number", line, col);
    std::string text(src_.substr(pos_, end - pos_));
    advance(end - pos_);
    return {is_float ? Tok::kFloat : Tok::kInt, text, line, col};
  }

  Token string_token(std::size_t line, std::size_t col) {
    advance(1);
    std::string out;
    while (true) {
      if (pos_ >= src_.size() || src_[pos_] == '\n') fail("unterminated string", line, col);
      const char c = src_[pos_];
      if (c == '"') {
        advance(1);
        return {Tok::kString, out, line, col};
      }
      if (c != '\\') {
        out += c;
        advance(1);
        continue;
      }
      const std::size_t esc_line = line_, esc_col = col_;
      advance(1);
      if (pos_ >= src_.size()) fail("unterminated string", line, col);
      const char e = src_[pos_];
      advance(1);
      switch (e) {
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        case 'u': {
          if (pos_ + 4 > src_.size()) fail("bad \\u escape", esc_line, esc_col);
          unsigned cp = 0;
          auto [p, ec] = std::from_chars(src_.data() + pos_, src_.data() + pos_ + 4, cp, 16);
          if (ec != std::errc() || p != src_.data() + pos_ + 4 || cp > 0x7f) {
            fail("bad \\u escape", esc_line, esc_col);
          }
          out += static_cast<char>(cp);
          advance(4);
          break;
        }
        default: fail(std::string("bad escape '\\") + e + "'", esc_line, esc_col);
      }
    }
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::size_t col_ = 1;
};

const std::vector<std::string> kValueStart = {"node", "number", "string", "true", "false", "None", "'['",
                                              "Array", "Var", "VarRef", "Opaque"};

class Parser {
 public:
  explicit Parser(std::vector<Token> tokens) : toks_(std::move(tokens)) {}

  Value document() {
    Value v = value();
    if (peek().type != Tok::kEnd) fail_at(peek(), "trailing input " + describe(peek()), {"end of input"});
    return v;
  }

 private:
  const Token& peek() const { return toks_[i_]; }
  const Token& take() { return toks_[i_ < toks_.size() - 1 ? i_++ : i_]; }

  [[noreturn]] void fail_at(const Token& t, const std::string& msg, std::vector<std::string> expected = {}) {
    throw ParseError(msg, t.line, t.col, std::move(expected));
  }

  bool at_punct(char c) const { return peek().type == Tok::kPunct && peek().text[0] == c; }

  const Token& expect_punct(char c) {
    if (!at_punct(c)) {
      fail_at(peek(), "unexpected " + describe(peek()), {std::string("'") + c + "'"});
    }
    return take();
  }

  const Token& expect(Tok type, const std::string& what) {
    if (peek().type != type) fail_at(peek(), "unexpected " + describe(peek()), {what});
    return take();
  }

  void expect_keyword(const std::string& word) {
    if (peek().type != Tok::kIdent || peek().text != word) fail_at(peek(), "unexpected " + describe(peek()), {word});
    take();
  }

  // `name=` at a fixed position inside Array/Var/VarRef/Opaque.
  void expect_field(const std::string& name) {
    expect_keyword(name);
    expect_punct('=');
  }

  Value value() {
    const Token& t = peek();
    switch (t.type) {
      case Tok::kInt: return Value(parse_int(take()));
      case Tok::kFloat: return Value(parse_float(take()));
      case Tok::kString: return Value(take().text);
      case Tok::kPunct:
        if (t.text == "[") return list();
        break;
      case Tok::kIdent: {
        if (t.text == "None") return (take(), Value());
        if (t.text == "true" || t.text == "false") return Value(take().text == "true");
        if (t.text == "nan" || t.text == "inf") return Value(parse_float(take()));
        const Token& name = take();
        if (name.text == "Array") return Value(array_body(name));
        if (name.text == "Var") return Value(var_body(name));
        if (name.text == "VarRef") return Value(var_ref_body());
        if (name.text == "Opaque") return opaque_body();
        return node_body(name);
      }
      case Tok::kEnd: break;
    }
    fail_at(t, "unexpected " + describe(t), kValueStart);
  }

  std::int64_t parse_int(const Token& t) {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
    if (ec != std::errc() || p != t.text.data() + t.text.size()) fail_at(t, "integer out of range");
    return v;
  }

  float parse_float(const Token& t) {
    if (t.text == "nan") return std::numeric_limits<float>::quiet_NaN();
    if (t.text == "inf") return std::numeric_limits<float>::infinity();
    if (t.text == "-inf") return -std::numeric_limits<float>::infinity();
    float v = 0;
    auto [p, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
    if (ec == std::errc::result_out_of_range) fail_at(t, "float out of range");
    if (ec != std::errc() || p != t.text.data() + t.text.size()) fail_at(t, "malformed float");
    return v;
  }

  Value list() {
    expect_punct('[');
    Value::List items;
    if (at_punct(']')) {
      take();
      return Value(std::move(items));
    }
    while (true) {
      items.push_back(value());
      if (at_punct(',')) {
        take();
        continue;
      }
      if (at_punct(']')) {
        take();
        return Value(std::move(items));
      }
      fail_at(peek(), "unexpected " + describe(peek()), {"','", "']'"});
    }
  }

  Value node_body(const Token& name) {
    expect_punct('(');
    std::vector<std::pair<Token, Value>> fields;
    if (!at_punct(')')) {
      while (true) {
        if (peek().type != Tok::kIdent) fail_at(peek(), "unexpected " + describe(peek()), {"field name", "')'"});
        Token field = take();
        expect_punct('=');
        fields.emplace_back(std::move(field), value());
        if (at_punct(',')) {
          take();
          if (at_punct(')')) fail_at(peek(), "unexpected " + describe(peek()), {"field name"});
          continue;
        }
        if (at_punct(')')) break;
        fail_at(peek(), "unexpected " + describe(peek()), {"','", "')'"});
      }
    }
    const Token& close = take();
    const tree::KindInfo* kind = KindRegistry::global().find(name.text);
    if (kind == nullptr) fail_at(name, "unknown kind '" + name.text + "'");
    std::vector<Value> ordered(kind->slots.size());
    std::vector<bool> seen(kind->slots.size(), false);
    for (auto& [field, v] : fields) {
      const int idx = kind->slot_index(field.text);
      if (idx < 0) fail_at(field, kind->name + " has no field '" + field.text + "'");
      const auto slot = static_cast<std::size_t>(idx);
      if (seen[slot]) fail_at(field, "field '" + field.text + "' given twice");
      seen[slot] = true;
      if (kind->slots[slot].type == SlotType::kFloat && v.is_int()) v = Value(static_cast<float>(v.as_int()));
      ordered[slot] = std::move(v);
    }
    for (std::size_t s = 0; s < seen.size(); ++s) {
      if (!seen[s]) fail_at(close, kind->name + " is missing field '" + kind->slots[s].name + "'");
    }
    try {
      return Value(std::make_shared<const Node>(*kind, std::move(ordered)));
    } catch (const Error& e) {
      fail_at(name, e.what());
    }
  }

  NamedArray array_body(const Token& name) {
    expect_punct('(');
    expect_field("dtype");
    const Token& dt = expect(Tok::kIdent, "dtype name");
    const auto dtype = parse_dtype(dt.text);
    if (!dtype) fail_at(dt, "unknown dtype '" + dt.text + "'", {"float32", "int32", "bool"});
    expect_punct(',');
    expect_field("named");
    expect_punct('{');
    NamedShape named;
    std::vector<std::int64_t> dims;
    if (!at_punct('}')) {
      while (true) {
        const Token& axis = expect(Tok::kString, "axis name");
        if (axis.text.empty()) fail_at(axis, "axis names must be non-empty");
        expect_punct(':');
        const std::int64_t size = dimension();
        if (!named.emplace(axis.text, size).second) fail_at(axis, "duplicate axis '" + axis.text + "'");
        if (at_punct(',')) {
          take();
          continue;
        }
        if (at_punct('}')) break;
        fail_at(peek(), "unexpected " + describe(peek()), {"','", "'}'"});
      }
    }
    take();
    for (const auto& [_, size] : named) dims.push_back(size);
    expect_punct(',');
    expect_field("positional");
    expect_punct('[');
    Shape positional;
    if (!at_punct(']')) {
      while (true) {
        positional.push_back(dimension());
        if (at_punct(',')) {
          take();
          continue;
        }
        if (at_punct(']')) break;
        fail_at(peek(), "unexpected " + describe(peek()), {"','", "']'"});
      }
    }
    take();
    dims.insert(dims.end(), positional.begin(), positional.end());
    expect_punct(',');
    expect_field("data");
    std::vector<float> floats;
    std::vector<std::int32_t> ints;
    data(*dtype, dims, 0, floats, ints);
    expect_punct(')');
    try {
      if (*dtype == DType::kFloat32) return NamedArray::floats(std::move(named), std::move(positional), std::move(floats));
      return NamedArray::ints(std::move(named), std::move(positional), std::move(ints), *dtype);
    } catch (const Error& e) {
      fail_at(name, e.what());
    }
  }

  std::int64_t dimension() {
    const Token& t = expect(Tok::kInt, "axis size");
    const std::int64_t v = parse_int(t);
    if (v < 0) fail_at(t, "axis size must be non-negative");
    return v;
  }

  void data(DType dtype, const std::vector<std::int64_t>& dims, std::size_t d, std::vector<float>& floats,
            std::vector<std::int32_t>& ints) {
    if (d == dims.size()) {
      element(dtype, floats, ints);
      return;
    }
    const Token& open = expect_punct('[');
    std::int64_t count = 0;
    if (!at_punct(']')) {
      while (true) {
        data(dtype, dims, d + 1, floats, ints);
        ++count;
        if (at_punct(',')) {
          take();
          continue;
        }
        if (at_punct(']')) break;
        fail_at(peek(), "unexpected " + describe(peek()), {"','", "']'"});
      }
    }
    take();
    if (count != dims[d]) {
      fail_at(open, "expected " + std::to_string(dims[d]) + " entries along axis " + std::to_string(d) + ", got " +
                        std::to_string(count));
    }
  }

  void element(DType dtype, std::vector<float>& floats, std::vector<std::int32_t>& ints) {
    const Token& t = peek();
    if (dtype == DType::kFloat32) {
      const bool special = t.type == Tok::kIdent && (t.text == "nan" || t.text == "inf");
      if (t.type == Tok::kFloat || t.type == Tok::kInt || special) {
        floats.push_back(parse_float(take()));
        return;
      }
      fail_at(t, "unexpected " + describe(t), {"number"});
    }
    if (dtype == DType::kBool) {
      if (t.type == Tok::kIdent && (t.text == "true" || t.text == "false")) {
        ints.push_back(take().text == "true" ? 1 : 0);
        return;
      }
      fail_at(t, "unexpected " + describe(t), {"true", "false"});
    }
    if (t.type != Tok::kInt) fail_at(t, "unexpected " + describe(t), {"integer"});
    const std::int64_t v = parse_int(take());
    if (v < std::numeric_limits<std::int32_t>::min() || v > std::numeric_limits<std::int32_t>::max()) {
      fail_at(t, "int32 value out of range");
    }
    ints.push_back(static_cast<std::int32_t>(v));
  }

  VariablePtr var_body(const Token&) {
    expect_punct('(');
    expect_field("label");
    const Token& label = expect(Tok::kString, "string");
    expect_punct(',');
    expect_field("kind");
    const Token& kind = expect(Tok::kIdent, "Parameter or StateVariable");
    tree::VarKind var_kind;
    if (kind.text == "Parameter") {
      var_kind = tree::VarKind::kParameter;
    } else if (kind.text == "StateVariable") {
      var_kind = tree::VarKind::kStateVariable;
    } else {
      fail_at(kind, "unknown variable kind '" + kind.text + "'", {"Parameter", "StateVariable"});
    }
    expect_punct(',');
    expect_field("frozen");
    const Token& frozen = expect(Tok::kIdent, "true or false");
    if (frozen.text != "true" && frozen.text != "false") fail_at(frozen, "unexpected " + describe(frozen), {"true", "false"});
    expect_punct(',');
    expect_field("value");
    const Token& array_name = peek();
    expect_keyword("Array");
    NamedArray value = array_body(array_name);
    expect_punct(')');
    if (vars_.contains(label.text)) fail_at(label, "duplicate Var label " + quote(label.text));
    auto var = std::make_shared<tree::Variable>(label.text, var_kind, std::move(value), frozen.text == "true");
    vars_.emplace(label.text, var);
    return var;
  }

  VariablePtr var_ref_body() {
    expect_punct('(');
    expect_field("label");
    const Token& label = expect(Tok::kString, "string");
    expect_punct(')');
    auto it = vars_.find(label.text);
    if (it == vars_.end()) fail_at(label, "VarRef to " + quote(label.text) + " before its Var");
    return it->second;
  }

  Value opaque_body() {
    expect_punct('(');
    expect_field("type");
    std::string type = expect(Tok::kString, "string").text;
    expect_punct(',');
    expect_field("payload");
    std::string payload = expect(Tok::kString, "string").text;
    expect_punct(')');
    return Value(tree::Opaque{std::move(type), std::move(payload)});
  }

  std::vector<Token> toks_;
  std::size_t i_ = 0;
  std::map<std::string, VariablePtr, std::less<>> vars_;
};

}  // namespace

Value parse(std::string_view doc) {
  models::register_kinds();
  return Parser(Lexer(doc).run()).document();
}

}  // namespace modelforge::rt
