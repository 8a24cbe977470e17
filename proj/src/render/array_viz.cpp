#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "modelforge/render.hpp"
#include "modelforge/roundtrip.hpp"

namespace modelforge::render {

const std::array<const char*, 10> kDigitPalette = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                                   "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::int64_t TruncatePlan::kept_count() const {
  std::int64_t n = 1;
  for (const auto& a : axes) n *= a.kept();
  return n;
}

namespace {

KeptRange keep(std::int64_t n, std::int64_t k) {
  if (n <= 2 * k + 1) return {n, n, 0};
  return {n, k, k};
}

std::int64_t kept_product(std::span<const std::int64_t> shape, std::int64_t k) {
  std::int64_t n = 1;
  for (auto s : shape) n *= keep(s, k).kept();
  return n;
}

}  // namespace

TruncatePlan truncate_plan(std::span<const std::int64_t> shape, std::int64_t budget) {
  // k at which every axis is whole; larger k changes nothing.
  std::int64_t k_whole = 0;
  for (auto s : shape) k_whole = std::max(k_whole, s / 2);
  // The kept count is non-decreasing in k, so binary search the last fit.
  std::int64_t lo = 0, hi = k_whole;
  while (lo < hi) {
    const std::int64_t mid = lo + (hi - lo + 1) / 2;
    if (kept_product(shape, mid) <= budget) {
      lo = mid;
    } else {
      hi = mid - 1;
    }
  }
  TruncatePlan plan;
  plan.k = lo;
  for (auto s : shape) plan.axes.push_back(keep(s, lo));
  return plan;
}

std::string diverging_color(double v, double sigma) {
  double t = 0.0;
  if (sigma > 0.0) t = std::clamp(v / (3.0 * sigma), -1.0, 1.0);
  // White at zero, blending to blue (negative) or red (positive).
  const int blue[3] = {33, 102, 172};
  const int red[3] = {178, 24, 43};
  const int* end = t < 0 ? blue : red;
  const double w = std::abs(t);
  int rgb[3];
  for (int i = 0; i < 3; ++i) rgb[i] = static_cast<int>(std::lround(255.0 * (1.0 - w) + end[i] * w));
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", rgb[0], rgb[1], rgb[2]);
  return buf;
}

namespace {

struct DisplayAxis {
  std::string name;
  std::int64_t size;
  std::int64_t stride;
};

std::vector<std::optional<std::int64_t>> kept_indices(const KeptRange& r) {
  std::vector<std::optional<std::int64_t>> out;
  for (std::int64_t i = 0; i < r.head; ++i) out.emplace_back(i);
  if (!r.whole()) {
    out.emplace_back(std::nullopt);
    for (std::int64_t i = r.size - r.tail; i < r.size; ++i) out.emplace_back(i);
  }
  return out;
}

std::vector<int> decimal_digits(std::int64_t v) {
  std::vector<int> out;
  do {
    out.push_back(static_cast<int>(v % 10));
    v /= 10;
  } while (v > 0);
  std::reverse(out.begin(), out.end());
  return out;
}

}  // namespace

ArrayViz visualize_array(const NamedArray& a, std::int64_t budget) {
  ArrayViz viz;
  viz.mode = a.is_float() ? VizMode::kContinuous : VizMode::kDigitbox;
  viz.shape = a.shape_string();
  if (a.size() > 0) viz.stats = nx::stats(a);

  // Display axes in canonical order; positional axes are shown as "#i".
  std::vector<DisplayAxis> all;
  for (const auto& axis : a.layout()) {
    all.push_back({axis.axis.is_named() ? axis.axis.name() : "#" + std::to_string(axis.axis.position()), axis.size,
                   axis.stride});
  }
  std::vector<std::size_t> by_size(all.size());
  std::iota(by_size.begin(), by_size.end(), 0);
  std::stable_sort(by_size.begin(), by_size.end(),
                   [&](std::size_t x, std::size_t y) { return all[x].size > all[y].size; });

  std::optional<std::size_t> row, col;
  std::vector<std::size_t> facets, sliced;
  if (by_size.size() == 1) {
    col = by_size[0];
  } else if (by_size.size() >= 2) {
    row = by_size[0];
    col = by_size[1];
  }
  for (std::size_t i = 2; i < by_size.size(); ++i) (facets.size() < 2 ? facets : sliced).push_back(by_size[i]);
  // Keep the grid reading in canonical order: row axis before column axis.
  if (row && col && *col < *row) std::swap(row, col);
  std::sort(facets.begin(), facets.end());
  std::sort(sliced.begin(), sliced.end());

  if (row) viz.row_axis = all[*row].name;
  if (col) viz.col_axis = all[*col].name;
  for (auto f : facets) viz.facet_axes.push_back(all[f].name);
  for (auto s : sliced) {
    viz.sliced_axes.push_back(all[s].name);
    viz.notices.push_back("axis " + all[s].name + " (size " + std::to_string(all[s].size) + ") shown at index 0 only");
  }

  std::vector<std::size_t> planned;
  if (row) planned.push_back(*row);
  if (col) planned.push_back(*col);
  planned.insert(planned.end(), facets.begin(), facets.end());
  std::vector<std::int64_t> dims;
  for (auto p : planned) dims.push_back(all[p].size);
  viz.plan = truncate_plan(dims, budget);
  for (std::size_t i = 0; i < planned.size(); ++i) {
    if (!viz.plan.axes[i].whole()) {
      viz.notices.push_back("axis " + all[planned[i]].name + " truncated to " +
                            std::to_string(viz.plan.axes[i].kept()) + " of " + std::to_string(all[planned[i]].size));
    }
  }
  if (a.size() == 0) return viz;

  const double sigma = viz.stats && std::isfinite(viz.stats->std) ? viz.stats->std : 0.0;
  std::vector<std::int64_t> index(all.size(), 0);  // sliced axes stay at 0

  auto make_cell = [&]() {
    VizCell cell;
    std::int64_t offset = 0;
    for (std::size_t d = 0; d < all.size(); ++d) {
      offset += index[d] * all[d].stride;
      if (d) cell.index += ", ";
      cell.index += all[d].name + "=" + std::to_string(index[d]);
    }
    if (a.is_float()) {
      const float v = a.float_data()[static_cast<std::size_t>(offset)];
      cell.value = rt::format_float(v);
      cell.nonfinite = !std::isfinite(v);
      cell.negative = v < 0;
      if (!cell.nonfinite) cell.color = diverging_color(v, sigma);
    } else {
      const std::int32_t v = a.int_data()[static_cast<std::size_t>(offset)];
      if (a.dtype() == DType::kBool) {
        cell.value = v ? "true" : "false";
      } else {
        cell.value = std::to_string(v);
      }
      cell.negative = v < 0;
      cell.digits = decimal_digits(std::abs(static_cast<std::int64_t>(v)));
      cell.color = kDigitPalette[static_cast<std::size_t>(cell.digits.front())];
    }
    return cell;
  };

  const std::size_t nrow_axes = row ? 1 : 0;
  const auto rows = row ? kept_indices(viz.plan.axes[0]) : std::vector<std::optional<std::int64_t>>{std::int64_t{0}};
  const auto cols = col ? kept_indices(viz.plan.axes[nrow_axes]) : std::vector<std::optional<std::int64_t>>{std::int64_t{0}};

  // Facet combinations over kept (non-elided) indices.
  std::vector<std::vector<std::int64_t>> facet_values;
  for (std::size_t f = 0; f < facets.size(); ++f) {
    std::vector<std::int64_t> vals;
    for (const auto& i : kept_indices(viz.plan.axes[nrow_axes + (col ? 1 : 0) + f])) {
      if (i) vals.push_back(*i);
    }
    facet_values.push_back(vals);
  }
  std::vector<std::size_t> counter(facets.size(), 0);
  while (true) {
    VizFacet facet;
    for (std::size_t f = 0; f < facets.size(); ++f) {
      index[facets[f]] = facet_values[f][counter[f]];
      if (f) facet.label += ", ";
      facet.label += all[facets[f]].name + "=" + std::to_string(index[facets[f]]);
    }
    for (const auto& r : rows) {
      std::vector<std::optional<VizCell>> line;
      for (const auto& c : cols) {
        if (!r || !c) {
          line.emplace_back(std::nullopt);
          continue;
        }
        if (row) index[*row] = *r;
        if (col) index[*col] = *c;
        line.emplace_back(make_cell());
      }
      facet.grid.push_back(std::move(line));
    }
    viz.facets.push_back(std::move(facet));
    std::size_t f = facets.size();
    while (f > 0) {
      --f;
      if (++counter[f] < facet_values[f].size()) break;
      counter[f] = 0;
      if (f == 0) return viz;
    }
    if (facets.empty()) return viz;
  }
}

}  // namespace modelforge::render
