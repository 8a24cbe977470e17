#pragma once

// Pretty-printing of trees as indented text or a self-contained HTML
// document, with array summaries and cell grids.
//
// Rendering goes through an intermediate RenderNode tree so hooks can replace
// the rendering of any node kind (or of arrays, via kind "NamedArray").
//
// HTML attribute contract read by the embedded viewer script:
//   data-path              path of the element's subtree (same string as copy path)
//   data-default-expanded  "true" / "false" on foldable regions
//   data-copy-path         payload of a copy-path button
//   data-roundtrip-name    qualified kind name on name labels
//   data-cell-index        "axis=i, ..." on array cells
//   data-cell-value        exact element value on array cells

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "modelforge/named_array.hpp"
#include "modelforge/tree.hpp"

namespace modelforge::render {

using tree::TreePath;
using tree::Value;

// ---- truncation ------------------------------------------------------------

struct KeptRange {
  std::int64_t size = 0;
  std::int64_t head = 0;  // leading indices kept
  std::int64_t tail = 0;  // trailing indices kept; 0 when the axis is whole
  bool whole() const { return head == size; }
  std::int64_t kept() const { return head + tail; }
};

struct TruncatePlan {
  std::int64_t k = 0;
  std::vector<KeptRange> axes;
  std::int64_t kept_count() const;
};

// Largest uniform k whose kept-element count fits the budget; axes of size
// <= 2k+1 are kept whole, others keep k leading and k trailing indices. Once
// every axis is whole, k stops growing.
TruncatePlan truncate_plan(std::span<const std::int64_t> shape, std::int64_t budget);

// ---- array visualization ---------------------------------------------------

enum class VizMode { kContinuous, kDigitbox };

struct VizCell {
  std::string index;  // "a=0, b=2"
  std::string value;  // exact text of the element
  std::string color;  // "#rrggbb"; empty for non-finite cells
  bool nonfinite = false;
  bool negative = false;
  std::vector<int> digits;  // digitbox mode, most significant first
};

struct VizFacet {
  std::string label;  // "c=1, d=0", empty without facet axes
  // Rows of cells; nullopt marks an elided row/column position.
  std::vector<std::vector<std::optional<VizCell>>> grid;
};

struct ArrayViz {
  VizMode mode = VizMode::kContinuous;
  std::string shape;
  std::optional<nx::ArrayStats> stats;  // absent for empty arrays
  std::string row_axis;                 // may be empty
  std::string col_axis;                 // may be empty
  std::vector<std::string> facet_axes;
  std::vector<std::string> sliced_axes;  // shown at index 0 only
  TruncatePlan plan;                     // over rows, cols, then facet axes
  std::vector<VizFacet> facets;
  std::vector<std::string> notices;
};

inline constexpr std::int64_t kDefaultBudget = 1000;

ArrayViz visualize_array(const NamedArray& a, std::int64_t budget = kDefaultBudget);

// Blue-white-red; v / (3 sigma) clamped to [-1, 1]. sigma == 0 gives white.
std::string diverging_color(double v, double sigma);
extern const std::array<const char*, 10> kDigitPalette;

// ---- render tree -----------------------------------------------------------

struct RenderNode {
  enum class Kind { kRecord, kSequence, kLeaf, kArrayViz, kFoldRegion };

  Kind kind = Kind::kLeaf;
  std::string label;
  std::string field;  // slot name when rendered as a field of a record
  std::vector<RenderNode> children;
  std::optional<TreePath> path;  // set on nodes that stand for a tree position
  bool default_expanded = false;
  std::string roundtrip_name;
  std::shared_ptr<const ArrayViz> viz;
};

struct RenderOptions {
  std::int64_t budget = kDefaultBudget;
  int expand_depth = 2;
};

class Renderer;

// State for one rendering pass; hooks use it to fall back to the default
// rendering or to render children.
class RenderContext {
 public:
  RenderContext(const Renderer& renderer, const RenderOptions& options) : renderer_(renderer), options_(options) {}

  const RenderOptions& options() const { return options_; }
  // Hook-aware rendering.
  RenderNode render(const Value& v, const TreePath& path);
  // Built-in rendering of `v` itself; children still go through hooks.
  RenderNode render_default(const Value& v, const TreePath& path);
  RenderNode render_array(const NamedArray& a, std::optional<TreePath> path);
  RenderNode render_array_default(const NamedArray& a, std::optional<TreePath> path);

 private:
  const Renderer& renderer_;
  const RenderOptions& options_;
  std::vector<const void*> stack_;
  std::map<std::string, bool, std::less<>> seen_vars_;
  int depth_ = 0;
};

class Renderer {
 public:
  using Hook = std::function<RenderNode(const Value&, const TreePath&, RenderContext&)>;
  // Array hooks see the array as a Value; path is empty for arrays inside variables.
  static constexpr std::string_view kArrayKind = "NamedArray";

  // `kind` is a registered kind name (short or qualified) or kArrayKind. A
  // second registration replaces the first and records a warning.
  void register_visualizer(std::string_view kind, Hook hook);
  const std::vector<std::string>& warnings() const { return warnings_; }
  const Hook* find_hook(std::string_view qualified_kind) const;

  RenderNode build(const Value& root, const RenderOptions& options = {}) const;
  // Indented text with short names.
  std::string text(const Value& root, const RenderOptions& options = {}) const;
  std::string html(const Value& root, const RenderOptions& options = {}) const;

 private:
  std::map<std::string, Hook, std::less<>> hooks_;
  std::vector<std::string> warnings_;
};

enum class TextMode { kDefault, kRoundtrip };

// Roundtrip mode is the roundtrip serialization, parseable back to `root`.
std::string render_text(const Value& root, TextMode mode = TextMode::kDefault);
std::string render_html(const Value& root, const RenderOptions& options = {});

// Serializes a render tree; exposed for hooks and tests.
std::string to_text(const RenderNode& node);
std::string to_html_document(const RenderNode& root);

std::string escape_html(std::string_view s);

}  // namespace modelforge::render
