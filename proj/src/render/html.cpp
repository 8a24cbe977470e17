#include <charconv>
#include <cmath>

#include "modelforge/render.hpp"

namespace modelforge::render {

std::string escape_html(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&#39;"; break;
      default: out += c;
    }
  }
  return out;
}

namespace {

constexpr std::string_view kStyle = R"css(
body { font-family: monospace; font-size: 13px; }
.mf-body { margin-left: 1.5em; }
details > summary { cursor: pointer; list-style: none; }
details > summary::before { content: "\25b8 "; }
details[open] > summary::before { content: "\25be "; }
.mf-field { color: #555; }
.mf-name { color: #1f4e9a; font-weight: bold; }
.mf-copy { font-size: 10px; margin-left: 0.5em; padding: 0 3px; }
.mf-copy.mf-flash { background: #9d9; }
.mf-stats, .mf-notice { color: #555; margin: 2px 0; }
.mf-grid { border-collapse: collapse; margin: 2px 0 6px 0; }
.mf-grid caption { text-align: left; color: #555; }
.mf-cell { width: 12px; height: 12px; padding: 0; border: 1px solid #eee; }
.mf-nonfinite { background: repeating-linear-gradient(45deg, #999 0 2px, #fff 2px 4px); }
.mf-elided { color: #999; text-align: center; }
.mf-digits { display: flex; flex-direction: column; width: 12px; height: 12px; }
.mf-digit { flex: 1; }
.mf-negative { outline: 1px solid #000; }
#mf-tip { position: fixed; display: none; background: #ffe; border: 1px solid #999; padding: 2px 4px; }
)css";

constexpr std::string_view kScript = R"js(
(function () {
  var tip = document.getElementById("mf-tip");
  document.addEventListener("click", function (e) {
    var b = e.target.closest("button.mf-copy");
    if (!b) return;
    e.preventDefault();
    e.stopPropagation();
    if (navigator.clipboard) navigator.clipboard.writeText(b.getAttribute("data-copy-path"));
    b.classList.add("mf-flash");
    setTimeout(function () { b.classList.remove("mf-flash"); }, 400);
  });
  var qualified = false;
  document.addEventListener("keydown", function (e) {
    if (e.key !== "r" || e.ctrlKey || e.metaKey || e.altKey) return;
    qualified = !qualified;
    document.querySelectorAll(".mf-name").forEach(function (n) {
      n.textContent = n.getAttribute(qualified ? "data-roundtrip-name" : "data-short-name");
    });
  });
  document.addEventListener("mouseover", function (e) {
    var c = e.target.closest("td.mf-cell");
    if (!c) return;
    tip.textContent = c.getAttribute("data-cell-index") + ": " + c.getAttribute("data-cell-value");
    tip.style.left = (e.clientX + 12) + "px";
    tip.style.top = (e.clientY + 12) + "px";
    tip.style.display = "block";
  });
  document.addEventListener("mouseout", function (e) {
    if (e.target.closest("td.mf-cell")) tip.style.display = "none";
  });
})();
)js";

std::string attr(std::string_view name, std::string_view value) {
  return " " + std::string(name) + "=\"" + escape_html(value) + "\"";
}

std::string stat_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  // Stats hold float32 values; the shortest float text reads back exactly.
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, static_cast<float>(v));
  return std::string(buf, end);
}

class HtmlWriter {
 public:
  std::string take() { return std::move(out_); }

  void node(const RenderNode& n) {
    switch (n.kind) {
      case RenderNode::Kind::kRecord:
      case RenderNode::Kind::kSequence:
      case RenderNode::Kind::kFoldRegion: fold(n); break;
      case RenderNode::Kind::kArrayViz: array(n); break;
      case RenderNode::Kind::kLeaf: leaf(n); break;
    }
  }

 private:
  std::string path_attr(const RenderNode& n) { return n.path ? attr("data-path", n.path->to_string()) : ""; }

  void copy_button(const RenderNode& n) {
    if (!n.path) return;
    out_ += "<button class=\"mf-copy\"" + attr("data-copy-path", n.path->to_string()) + ">copy</button>";
  }

  void field(const RenderNode& n) {
    if (!n.field.empty()) out_ += "<span class=\"mf-field\">" + escape_html(n.field) + "=</span>";
  }

  void name(const RenderNode& n) {
    if (n.roundtrip_name.empty() || n.roundtrip_name == n.label) {
      out_ += escape_html(n.label);
      return;
    }
    out_ += "<span class=\"mf-name\"" + attr("data-short-name", n.label) + attr("data-roundtrip-name", n.roundtrip_name) +
            ">" + escape_html(n.label) + "</span>";
  }

  void open_fold(const RenderNode& n, std::string_view cls) {
    out_ += "<details class=\"mf-fold " + std::string(cls) + "\"" + path_attr(n) +
            attr("data-default-expanded", n.default_expanded ? "true" : "false") + (n.default_expanded ? " open" : "") +
            "><summary>";
  }

  void fold(const RenderNode& n) {
    const bool seq = n.kind == RenderNode::Kind::kSequence;
    open_fold(n, seq ? "mf-sequence" : "mf-record");
    field(n);
    if (seq) {
      out_ += "[";
    } else {
      name(n);
      out_ += "(";
    }
    copy_button(n);
    out_ += "</summary><div class=\"mf-body\">";
    for (const auto& c : n.children) node(c);
    out_ += "</div>";
    out_ += seq ? "]" : ")";
    out_ += "</details>";
  }

  void leaf(const RenderNode& n) {
    out_ += "<div class=\"mf-leaf\"" + path_attr(n) + ">";
    field(n);
    name(n);
    copy_button(n);
    out_ += "</div>";
  }

  void array(const RenderNode& n) {
    // Arrays inside variables have no tree position of their own and are
    // shown as plain blocks under the variable's fold region.
    if (n.path) {
      open_fold(n, "mf-array");
    } else {
      out_ += "<div class=\"mf-array\">";
    }
    field(n);
    out_ += "<span class=\"mf-summary\">" + escape_html(n.label) + "</span>";
    copy_button(n);
    if (n.path) out_ += "</summary>";
    if (n.viz) viz(*n.viz);
    out_ += n.path ? "</details>" : "</div>";
  }

  void viz(const ArrayViz& v) {
    out_ += "<div class=\"mf-viz\"" + attr("data-mode", v.mode == VizMode::kDigitbox ? "digitbox" : "continuous") + ">";
    if (v.stats) {
      const auto& s = *v.stats;
      out_ += "<div class=\"mf-stats\"" + attr("data-stat-mean", stat_number(s.mean)) +
              attr("data-stat-std", stat_number(s.std)) + attr("data-stat-min", stat_number(s.min)) +
              attr("data-stat-max", stat_number(s.max)) + attr("data-stat-count-zero", std::to_string(s.count_zero)) +
              attr("data-stat-count-nonfinite", std::to_string(s.count_nonfinite)) +
              attr("data-stat-total-count", std::to_string(s.total_count)) + ">";
      out_ += "mean=" + stat_number(s.mean) + " std=" + stat_number(s.std) + " min=" + stat_number(s.min) +
              " max=" + stat_number(s.max) + " zeros=" + std::to_string(s.count_zero) +
              " nonfinite=" + std::to_string(s.count_nonfinite) + " total=" + std::to_string(s.total_count);
      out_ += "</div>";
    }
    for (const auto& notice : v.notices) out_ += "<div class=\"mf-notice\">" + escape_html(notice) + "</div>";
    std::string axes;
    if (!v.row_axis.empty()) axes += "rows: " + v.row_axis;
    if (!v.col_axis.empty()) axes += (axes.empty() ? "" : ", ") + std::string("cols: ") + v.col_axis;
    for (const auto& facet : v.facets) {
      out_ += "<table class=\"mf-grid\"><caption>" + escape_html(facet.label.empty() ? axes : facet.label + "; " + axes) +
              "</caption>";
      for (const auto& row : facet.grid) {
        out_ += "<tr>";
        for (const auto& cell : row) {
          if (!cell) {
            out_ += "<td class=\"mf-elided\">&hellip;</td>";
            continue;
          }
          this->cell(*cell, v.mode);
        }
        out_ += "</tr>";
      }
      out_ += "</table>";
    }
    out_ += "</div>";
  }

  void cell(const VizCell& c, VizMode mode) {
    std::string cls = "mf-cell";
    if (c.nonfinite) cls += " mf-nonfinite";
    if (mode == VizMode::kDigitbox) {
      cls += " mf-digitbox";
      if (c.negative) cls += " mf-negative";
    }
    out_ += "<td" + attr("class", cls) + attr("data-cell-index", c.index) + attr("data-cell-value", c.value);
    if (mode == VizMode::kContinuous && !c.color.empty()) out_ += attr("style", "background:" + c.color);
    out_ += ">";
    if (mode == VizMode::kDigitbox) {
      out_ += "<span class=\"mf-digits\">";
      for (int d : c.digits) {
        out_ += "<span class=\"mf-digit\"" + attr("data-digit", std::to_string(d)) +
                attr("style", std::string("background:") + kDigitPalette[static_cast<std::size_t>(d)]) + "></span>";
      }
      out_ += "</span>";
    }
    out_ += "</td>";
  }

  std::string out_;
};

}  // namespace

std::string to_html_document(const RenderNode& root) {
  HtmlWriter w;
  w.node(root);
  std::string out = "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>modelforge</title><style>";
  out += kStyle;
  out += "</style></head><body><div class=\"mf-root\">";
  out += w.take();
  out += "</div><div id=\"mf-tip\"></div><script>";
  out += kScript;
  out += "</script></body></html>\n";
  return out;
}

}  // namespace modelforge::render
