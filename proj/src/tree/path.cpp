#include <cctype>
#include <charconv>

#include "modelforge/error.hpp"
#include "modelforge/tree.hpp"

namespace modelforge::tree {

TreePath TreePath::child(std::string field) const {
  TreePath out = *this;
  out.steps_.emplace_back(std::move(field));
  return out;
}

TreePath TreePath::child(std::int64_t index) const {
  TreePath out = *this;
  out.steps_.emplace_back(index);
  return out;
}

TreePath TreePath::parent() const {
  if (steps_.empty()) throw PathError("the root path has no parent", "");
  TreePath out = *this;
  out.steps_.pop_back();
  return out;
}

TreePath TreePath::concat(const TreePath& tail) const {
  TreePath out = *this;
  out.steps_.insert(out.steps_.end(), tail.steps_.begin(), tail.steps_.end());
  return out;
}

bool TreePath::is_prefix_of(const TreePath& other) const {
  if (steps_.size() > other.steps_.size()) return false;
  return std::equal(steps_.begin(), steps_.end(), other.steps_.begin());
}

std::string TreePath::to_string(std::string_view root) const {
  std::string out(root);
  for (const auto& step : steps_) {
    if (const auto* field = std::get_if<std::string>(&step)) {
      out += '.';
      out += *field;
    } else {
      out += '[';
      out += std::to_string(std::get<std::int64_t>(step));
      out += ']';
    }
  }
  return out;
}

namespace {

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

}  // namespace

TreePath TreePath::parse(std::string_view text) {
  std::size_t i = 0;
  auto fail = [&](const std::string& what) -> TreePath {
    throw PathError("malformed path: " + what + " at offset " + std::to_string(i), std::string(text));
  };
  if (i >= text.size() || !ident_start(text[i])) return fail("expected a root identifier");
  while (i < text.size() && ident_char(text[i])) ++i;
  std::vector<PathStep> steps;
  while (i < text.size()) {
    if (text[i] == '.') {
      ++i;
      const std::size_t start = i;
      if (i >= text.size() || !ident_start(text[i])) return fail("expected a field name");
      while (i < text.size() && ident_char(text[i])) ++i;
      steps.emplace_back(std::string(text.substr(start, i - start)));
    } else if (text[i] == '[') {
      ++i;
      std::int64_t index = 0;
      auto [ptr, ec] = std::from_chars(text.data() + i, text.data() + text.size(), index);
      if (ec != std::errc() || index < 0) return fail("expected a non-negative index");
      i = static_cast<std::size_t>(ptr - text.data());
      if (i >= text.size() || text[i] != ']') return fail("expected ']'");
      ++i;
      steps.emplace_back(index);
    } else {
      return fail("unexpected character");
    }
  }
  return TreePath(std::move(steps));
}

std::strong_ordering operator<=>(const TreePath& a, const TreePath& b) {
  const std::size_t n = std::min(a.steps_.size(), b.steps_.size());
  for (std::size_t i = 0; i < n; ++i) {
    const PathStep& x = a.steps_[i];
    const PathStep& y = b.steps_[i];
    if (x.index() != y.index()) return x.index() <=> y.index();
    if (const auto* s = std::get_if<std::string>(&x)) {
      if (auto c = s->compare(std::get<std::string>(y)); c != 0) return c <=> 0;
    } else if (auto c = std::get<std::int64_t>(x) <=> std::get<std::int64_t>(y); c != 0) {
      return c;
    }
  }
  return a.steps_.size() <=> b.steps_.size();
}

}  // namespace modelforge::tree
