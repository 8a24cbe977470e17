// One PASS/FAIL line per primary acceptance criterion. Exit status is nonzero
// when any criterion fails.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "modelforge/render.hpp"
#include "modelforge/roundtrip.hpp"
#include "modelforge/selection.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
namespace nn = modelforge::nn;
namespace render = modelforge::render;
namespace rt = modelforge::rt;
using modelforge::NamedArray;
using modelforge::NamedShape;
using oracles::models::Variant;
using oracles::Rng;
using oracles::Value;
using modelforge::tree::TreePath;
namespace models = modelforge::models;
namespace nx = modelforge::nx;
namespace tree = modelforge::tree;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void note(const std::string& s) {
    if (pass) detail += (detail.empty() ? "" : "; ") + s;
  }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

double norm(const NamedArray& a) {
  double s = 0;
  for (std::int64_t i = 0; i < a.size(); ++i) s += static_cast<double>(a.value_at(i)) * a.value_at(i);
  return std::sqrt(s);
}

models::TransformerConfig demo(Variant v) {
  models::TransformerConfig c;
  c.variant = v;
  c.seed = 3;
  return c;
}

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("modelforge-accept-" + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

int cli(const std::string& args, const std::string& stdout_file = "/dev/null") {
  const std::string cmd = std::string(MODELFORGE_CLI_PATH) + " " + args + " >" + stdout_file + " 2>/dev/null";
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- criteria --------------------------------------------------------------

Outcome nmap_equivalence() {
  Outcome o;
  const auto r = oracles::run_nmap_oracle(2024, 200);
  o.require(r.cases == 200, "200 cases");
  o.require(r.shape_mismatches == 0, std::to_string(r.shape_mismatches) + " shape mismatches");
  o.require(r.int_mismatches == 0, std::to_string(r.int_mismatches) + " int mismatches");
  o.require(r.worst_float_rel <= 1e-6, "float rel err " + fmt(r.worst_float_rel) + " > 1e-6");
  o.note("200 cases, worst float rel err " + fmt(r.worst_float_rel));
  return o;
}

Outcome structure_correspondence() {
  Outcome o;
  for (Variant v : {Variant::kLlamaSequential, Variant::kNeoxParallel}) {
    const double gap = oracles::reference_gap(demo(v), 11, 20);
    const std::string name(models::variant_name(v));
    o.require(gap <= 1e-5, name + " gap " + fmt(gap) + " > 1e-5");
    o.note(name + " max abs diff " + fmt(gap));
  }
  return o;
}

Outcome kv_cache_equivalence() {
  Outcome o;
  for (Variant v : {Variant::kLlamaSequential, Variant::kNeoxParallel}) {
    const Value model = oracles::randomized(models::build(demo(v)), 21);
    const Value cached = models::enable_kv_caching(model, 24, {{"batch", 1}});
    const NamedArray prompt = models::token_array({{3, 1, 4}});
    const auto full = models::greedy_decode(model, prompt, 16);
    const auto fast = models::greedy_decode(cached, prompt, 16);
    double worst = 0;
    for (std::size_t s = 0; s < 16; ++s) {
      worst = std::max(worst, static_cast<double>(nx::max_abs_diff(full.step_logits[s], fast.step_logits[s])));
    }
    const std::string name(models::variant_name(v));
    o.require(fast.step_logits.size() == 16, name + " 16 steps");
    o.require(full.tokens == fast.tokens, name + " decoded tokens differ");
    o.require(worst <= 1e-4, name + " step logits diff " + fmt(worst) + " > 1e-4");
    o.note(name + " max step diff " + fmt(worst));
  }
  return o;
}

Outcome lora() {
  Outcome o;
  const Value base = models::build(demo(Variant::kLlamaSequential));
  const Value adapted = models::loraify_all(base, 2, 2.0f, 5);
  const NamedArray tokens = models::token_array({{1, 2, 3, 4, 5, 6, 7, 8}, {8, 7, 6, 5, 4, 3, 2, 1}});
  const float noop = nx::max_abs_diff(models::run(base, tokens), models::run(adapted, tokens));
  o.require(noop <= 1e-6f, "init diff " + fmt(noop) + " > 1e-6");
  std::map<std::string, NamedArray> frozen;
  for (const auto& v : tree::variables(adapted)) {
    if (v->frozen()) frozen.emplace(v->label(), v->value());
  }
  o.require(frozen.size() == 14, "one frozen base weight per Linear");
  const auto result = models::train_toy(adapted, tokens, 50, 0.1f);
  o.require(result.losses.size() == 51, "50 steps");
  bool strictly = true;
  for (std::size_t i = 1; i < result.losses.size(); ++i) strictly = strictly && result.losses[i] < result.losses[i - 1];
  o.require(strictly, "loss not strictly decreasing");
  std::size_t identical = 0;
  for (const auto& v : tree::variables(result.model)) {
    auto it = frozen.find(v->label());
    if (it != frozen.end() && modelforge::bitwise_equal(v->value(), it->second)) ++identical;
  }
  o.require(identical == frozen.size(), "base weights changed");
  o.note("init diff " + fmt(noop) + ", loss " + fmt(result.losses.front()) + " -> " + fmt(result.losses.back()) +
         ", " + std::to_string(identical) + " base weights bit-identical");
  return o;
}

Outcome linearization() {
  Outcome o;
  Rng rng(8);
  auto w = tree::make_parameter("w", testing::random_floats(rng, {{"e", 4}, {"o", 3}}));
  const Value target = nn::linear(w, {"e"}, {"o"});
  const auto x = testing::random_floats(rng, {{"e", 4}, {"worlds", 3}});
  const float exact = nx::max_abs_diff(nn::forward(target, x), nn::forward(nn::linearize_and_adjust(target, "worlds", 1), x));
  o.require(exact <= 1e-6f, "linear target diff " + fmt(exact));

  auto w1 = tree::make_parameter("w1", testing::random_floats(rng, {{"e", 4}, {"h", 6}}));
  auto w2 = tree::make_parameter("w2", testing::random_floats(rng, {{"e", 4}, {"h", 6}}));
  const Value mlp = nn::sequential({nn::linear(w1, {"e"}, {"h"}), nn::elementwise("gelu_tanh"), nn::linear(w2, {"h"}, {"e"})});
  const Value lin = nn::linearize_and_adjust(mlp, "worlds", 0);
  const auto x0 = testing::random_floats(rng, {{"e", 4}});
  const auto delta = testing::random_floats(rng, {{"e", 4}});
  auto error_at = [&](float scale) {
    const NamedArray parts[] = {x0, nx::add(x0, nx::scale(delta, scale))};
    const auto xs = nx::stack(parts, "worlds");
    return norm(nx::slice(nx::sub(nn::forward(lin, xs), nn::forward(mlp, xs)), "worlds", 1));
  };
  const double e1 = error_at(0.4f), e2 = error_at(0.2f), e3 = error_at(0.1f);
  o.require(e1 / e2 >= 3.0 && e2 / e3 >= 3.0, "halving ratios " + fmt(e1 / e2) + ", " + fmt(e2 / e3));

  // JVP through a full transformer block against central differences.
  const Value model = oracles::randomized(models::build(demo(Variant::kNeoxParallel)), 9);
  double worst_jvp = 0;
  for (const char* kind : {"TransformerBlock", "Attention", "TransformerFeedForward"}) {
    const Value layer = tree::select(model).at_instances_of(kind).get_all().front();
    const NamedShape shape{{"embedding", 16}, {"seq", 5}};
    const auto xin = testing::random_floats(rng, shape);
    const auto dx = testing::random_floats(rng, shape);
    const auto side = models::position_inputs(5);
    const auto [primal, tangent] = nn::jvp(layer, xin, dx, side);
    const float eps = 1e-2f;
    const auto fd = nx::scale(nx::sub(nn::forward(layer, nx::add(xin, nx::scale(dx, eps)), side),
                                      nn::forward(layer, nx::sub(xin, nx::scale(dx, eps)), side)),
                              0.5f / eps);
    worst_jvp = std::max(worst_jvp, norm(nx::sub(tangent, fd)) / norm(fd));
  }
  o.require(worst_jvp <= 1e-3, "jvp rel err " + fmt(worst_jvp) + " > 1e-3");
  o.note("linear diff " + fmt(exact) + ", halving ratios " + fmt(e1 / e2) + "/" + fmt(e2 / e3) + ", jvp rel err " +
         fmt(worst_jvp));
  return o;
}

Outcome rewire_patching() {
  Outcome o;
  const Value model = oracles::randomized(models::build(demo(Variant::kLlamaSequential)), 41);
  {
    const NamedArray t = models::token_array({{2, 4, 6, 8}});
    const NamedArray parts[] = {t, t, t};
    const auto tokens = nx::stack(parts, "worlds");
    const Value patched = models::patch_activations(model, "TransformerBlock", "worlds", 0, {1, 2});
    const float d = nx::max_abs_diff(models::run(patched, tokens), models::run(model, tokens));
    o.require(d <= 1e-6f, "identical-worlds diff " + fmt(d));
    o.note("identical-worlds diff " + fmt(d));
  }
  {
    const NamedArray parts[] = {models::token_array({{1, 2, 3}}), models::token_array({{4, 5, 6}})};
    const auto tokens = nx::stack(parts, "worlds");
    const auto blocks = tree::select(model).at_instances_of("TransformerBlock");
    // Patch only after the last block.
    const tree::Selection last(model, {blocks.paths().back()});
    const Value patched = last.insert_after(nn::rewire("worlds", 0, {1}));
    const auto logits = models::run(patched, tokens);
    const float d = nx::max_abs_diff(nx::slice(logits, "worlds", 0), nx::slice(logits, "worlds", 1));
    o.require(d <= 1e-6f, "final-site diff " + fmt(d));
    o.note("final-site diff " + fmt(d));
  }
  {
    // Induction-style prompts: a repeated pattern whose next token is known.
    auto row = [](std::vector<std::int32_t> t) { return nx::slice(models::token_array({t}), "batch", 0); };
    const NamedArray parts[] = {row({1, 2, 3, 4, 1, 2, 3}), row({5, 6, 7, 8, 5, 6, 7}), row({9, 10, 1, 5, 9, 10, 1})};
    const auto sweep = models::head_patching_sweep(model, nx::stack(parts, "worlds"), "worlds", 0, {4, 8, 5});
    bool zero = true;
    bool nonzero_elsewhere = false;
    for (std::int64_t s = 0; s < sweep.axis_size("site"); ++s) {
      for (std::int64_t h = 0; h < sweep.axis_size("head"); ++h) {
        zero = zero && sweep.value_at({{"head", h}, {"site", s}, {"worlds", 0}}) == 0.0f;
        nonzero_elsewhere = nonzero_elsewhere || sweep.value_at({{"head", h}, {"site", s}, {"worlds", 1}}) != 0.0f;
      }
    }
    o.require(zero, "source-world column not exactly zero");
    o.require(nonzero_elsewhere, "sweep has no effect in other worlds");
    o.note("sweep " + sweep.shape_string() + ", source column exactly zero");
  }
  return o;
}

std::size_t count_kind(const Value& root, std::string_view kind) {
  std::size_t n = 0;
  tree::visit(root, [&](const TreePath&, const Value& v) {
    if (v.is_node() && v.as_node()->is(kind)) ++n;
    return true;
  });
  return n;
}

Outcome selector_laws() {
  Outcome o;
  testing::TreeGen gen(500);
  const Value marker = nn::constant_rescale(42.0f);
  const Value probe = nn::constant_rescale(7.0f);
  int identity_fail = 0, frame_fail = 0, insert_fail = 0, insert_sites = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const Value root = gen.layer(4);
    const auto sel = tree::select(root).at_instances_of("Elementwise");
    if (!tree::structurally_equal(sel.apply([](const Value& v) { return v; }), root)) ++identity_fail;
    const Value out = sel.set(marker);
    tree::visit(root, [&](const TreePath& p, const Value& v) {
      for (const auto& s : sel.paths()) {
        if (s.is_prefix_of(p) || p.is_prefix_of(s)) return true;
      }
      if (rt::serialize(tree::resolve(out, p)) != rt::serialize(v)) ++frame_fail;
      return true;
    });
    std::vector<TreePath> in_lists;
    for (const auto& p : sel.paths()) {
      if (!p.empty() && std::holds_alternative<std::int64_t>(p.back())) in_lists.push_back(p);
    }
    const tree::Selection list_sel(root, in_lists);
    const Value inserted = list_sel.insert_after(probe);
    insert_sites += static_cast<int>(list_sel.count());
    if (count_kind(inserted, "ConstantRescale") != count_kind(root, "ConstantRescale") + list_sel.count() ||
        tree::count_nodes(inserted) != tree::count_nodes(root) + list_sel.count()) {
      ++insert_fail;
    }
  }
  o.require(identity_fail == 0, std::to_string(identity_fail) + " identity violations");
  o.require(frame_fail == 0, std::to_string(frame_fail) + " frame violations");
  o.require(insert_fail == 0, std::to_string(insert_fail) + " insert count violations");
  o.require(insert_sites > 0, "no insertion sites generated");
  o.note("500 trees, " + std::to_string(insert_sites) + " insertion sites");
  return o;
}

Outcome roundtrip() {
  Outcome o;
  int failures = 0, checked = 0;
  auto check = [&](const Value& v) {
    ++checked;
    const std::string text = rt::serialize(v);
    const Value back = rt::parse(text);
    if (!tree::structurally_equal(back, v) || rt::serialize(back) != text) ++failures;
  };
  testing::TreeGen gen(77);
  for (int i = 0; i < 200; ++i) check(gen.layer(4));
  for (Variant v : {Variant::kLlamaSequential, Variant::kNeoxParallel}) {
    const Value base = models::build(demo(v));
    check(base);
    check(models::loraify_all(base, 2, 4.0f, 1));
    check(models::enable_kv_caching(base, 8, {{"batch", 2}}));
    check(models::patch_activations(base, "TransformerBlock", "worlds", 0, {1}));
    check(models::linearize(base, "TransformerFeedForward", "worlds", 0));
  }
  o.require(failures == 0, std::to_string(failures) + " of " + std::to_string(checked) + " trees differ");
  TempDir dir;
  int cli_fail = 0;
  cli_fail += cli("build --out " + (dir / "m.rt")) != 0;
  cli_fail += cli("transform lora --in " + (dir / "m.rt") + " --out " + (dir / "l.rt")) != 0;
  cli_fail += cli("transform kvcache --in " + (dir / "m.rt") + " --out " + (dir / "k.rt")) != 0;
  for (const char* f : {"m.rt", "l.rt", "k.rt"}) cli_fail += cli("roundtrip-check --in " + (dir / f)) != 0;
  o.require(cli_fail == 0, "CLI roundtrip-check did not exit 0");
  o.note(std::to_string(checked) + " trees, CLI roundtrip-check exit 0");
  return o;
}

Outcome renderer() {
  Outcome o;
  const Value model = models::build(demo(Variant::kLlamaSequential));
  const std::string html = render::render_html(model);

  // Stats in document order follow the variables' first occurrences.
  const auto means = oracles::attr_values(html, "data-stat-mean");
  const auto stds = oracles::attr_values(html, "data-stat-std");
  const auto mins = oracles::attr_values(html, "data-stat-min");
  const auto maxs = oracles::attr_values(html, "data-stat-max");
  const auto vars = tree::variables(model);
  o.require(means.size() == vars.size(), "one stats block per variable");
  int stat_fail = 0;
  for (std::size_t i = 0; i < std::min(means.size(), vars.size()); ++i) {
    const NamedArray& a = vars[i]->value();
    std::vector<float> flat;
    for (std::int64_t j = 0; j < a.size(); ++j) flat.push_back(a.value_at(j));
    const auto f = NamedArray::floats({{"all", static_cast<std::int64_t>(flat.size())}}, {}, flat);
    const float mean = nx::reduce(nx::ReduceOp::kMean, f, "all").float_data()[0];
    const float mx = nx::reduce(nx::ReduceOp::kMax, f, "all").float_data()[0];
    const float mn = -nx::reduce(nx::ReduceOp::kMax, nx::scale(f, -1.0f), "all").float_data()[0];
    const auto sq = nx::map(f, [mean](float v) { return (v - mean) * (v - mean); });
    const float sd = std::sqrt(nx::reduce(nx::ReduceOp::kMean, sq, "all").float_data()[0]);
    auto same = [](const std::string& text, float v) { return std::strtof(text.c_str(), nullptr) == v; };
    if (!same(means[i], mean) || !same(maxs[i], mx) || !same(mins[i], mn) || !same(stds[i], sd)) ++stat_fail;
  }
  o.require(stat_fail == 0, std::to_string(stat_fail) + " stats blocks differ from reduce");

  // truncate_plan against exhaustive search over k.
  int plan_fail = 0, plans = 0;
  const std::int64_t budgets[] = {1, 7, 50, 400, 1000, 5000};
  auto check_plan = [&](const std::vector<std::int64_t>& shape) {
    for (std::int64_t b : budgets) {
      ++plans;
      const std::int64_t k = oracles::best_k(shape, b);
      const auto plan = render::truncate_plan(shape, b);
      bool ok = plan.axes.size() == shape.size() && plan.kept_count() == oracles::kept_at(shape, k);
      for (std::size_t i = 0; ok && i < shape.size(); ++i) {
        const auto& r = plan.axes[i];
        ok = shape[i] <= 2 * k + 1 ? r.whole() : (r.head == k && r.tail == k);
      }
      if (!ok) ++plan_fail;
    }
  };
  for (std::int64_t a = 1; a <= 64; ++a) {
    check_plan({a});
    for (std::int64_t b = 1; b <= 64; ++b) {
      check_plan({a, b});
      for (std::int64_t c = 1; c <= 64; c += 7) check_plan({a, b, c});
    }
  }
  o.require(plan_fail == 0, std::to_string(plan_fail) + " truncation plans not maximal");

  // Every data-path resolves, once each.
  std::set<std::string> seen;
  int path_fail = 0;
  for (const auto& text : oracles::attr_values(html, "data-path")) {
    const std::string p = oracles::unescape_html(text);
    if (!seen.insert(p).second || !tree::resolves(model, TreePath::parse(p))) ++path_fail;
  }
  o.require(path_fail == 0 && !seen.empty(), std::to_string(path_fail) + " data-paths fail to resolve");

  // Token ids 0-9 give one solid box each.
  std::vector<std::int32_t> ids{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  const std::string ids_html = render::render_html(Value(nn::constant_multiply(NamedArray::ints({{"seq", 10}}, {}, ids))));
  const auto digits = oracles::attr_values(ids_html, "data-digit");
  bool boxes = digits.size() == 10;
  for (std::size_t i = 0; boxes && i < 10; ++i) boxes = digits[i] == std::to_string(i);
  for (std::size_t i = 0; boxes && i < 10; ++i) {
    boxes = ids_html.find("data-digit=\"" + std::to_string(i) + "\" style=\"background:" + render::kDigitPalette[i] +
                          "\"") != std::string::npos;
  }
  o.require(boxes, "ids 0-9 are not single solid boxes");
  o.note(std::to_string(means.size()) + " stats blocks, " + std::to_string(plans) + " plans, " +
         std::to_string(seen.size()) + " data-paths, digitbox 0-9 ok");
  return o;
}

Outcome determinism() {
  Outcome o;
  TempDir dir;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"build --variant llama --seed 5 --out {}", ""},
      {"build --variant neox --blocks 3 --seed 5 --out {}", ""},
      {"transform lora --in {m} --rank 2 --seed 1 --out {}", ""},
      {"transform kvcache --in {m} --len 16 --out {}", ""},
      {"transform patch --in {m} --after TransformerBlock --src 0 --dst 1 --out {}", ""},
      {"transform linearize --in {m} --target TransformerFeedForward --ref 0 --out {}", ""},
      {"run --in {m} --tokens 1,2,3 --out {}", ""},
      {"run --in {m} --tokens 1,2,3 --decode 5 --out {}", ""},
      {"run --in {m} --tokens 1,2,3 --worlds 2 --out {}", ""},
      {"render --in {m} --format text --out {}", ""},
      {"render --in {m} --format roundtrip --out {}", ""},
      {"render --in {m} --format html --out {}", ""},
      {"roundtrip-check --in {m}", "stdout"},
      {"inspect --in {m}", "stdout"},
      {"inspect --in {m} --count Linear", "stdout"},
  };
  if (cli("build --out " + (dir / "m.rt")) != 0) {
    o.require(false, "build failed");
    return o;
  }
  int differ = 0, failed = 0;
  for (std::size_t i = 0; i < commands.size(); ++i) {
    std::string outputs[2];
    for (int rep = 0; rep < 2; ++rep) {
      const std::string file = dir / ("out" + std::to_string(i) + "_" + std::to_string(rep));
      std::string args = commands[i].first;
      if (auto p = args.find("{m}"); p != std::string::npos) args.replace(p, 3, dir / "m.rt");
      if (auto p = args.find("{}"); p != std::string::npos) args.replace(p, 2, file);
      const bool to_stdout = commands[i].second == "stdout";
      if (cli(args, to_stdout ? file : "/dev/null") != 0) ++failed;
      outputs[rep] = slurp(file);
    }
    if (outputs[0] != outputs[1] || outputs[0].empty()) ++differ;
  }
  o.require(failed == 0, std::to_string(failed) + " command runs failed");
  o.require(differ == 0, std::to_string(differ) + " commands not byte-identical");
  o.note(std::to_string(commands.size()) + " commands byte-identical on rerun");
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    Outcome (*run)();
    double limit_seconds;  // 0 when the criterion has no runtime bound
  };
  const Criterion criteria[] = {
      {"nmap oracle equivalence", nmap_equivalence, 10.0},
      {"structure/behavior correspondence", structure_correspondence, 30.0},
      {"KV-cache equivalence", kv_cache_equivalence, 0.0},
      {"LoRA no-op at init and adapter-only training", lora, 0.0},
      {"linearization", linearization, 0.0},
      {"rewire/patching", rewire_patching, 0.0},
      {"selector laws", selector_laws, 20.0},
      {"roundtrip", roundtrip, 0.0},
      {"renderer correctness", renderer, 0.0},
      {"CLI determinism", determinism, 0.0},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.limit_seconds > 0) o.require(secs < c.limit_seconds, "runtime over " + fmt(c.limit_seconds) + " s");
    if (!o.pass) ++failures;
    std::printf("%s  %s: %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(std::size(criteria)) - failures, std::size(criteria));
  return failures == 0 ? 0 : 1;
}
