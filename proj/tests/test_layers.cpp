#include <doctest.h>

#include <cmath>

#include "modelforge/error.hpp"
#include "modelforge/selection.hpp"
#include "support.hpp"

using modelforge::ForwardError;
using modelforge::FrozenVariableError;
using modelforge::NamedArray;
using modelforge::NamedShape;
namespace nn = modelforge::nn;
namespace nx = modelforge::nx;
namespace tree = modelforge::tree;
using testing::Rng;
using tree::Value;

namespace {

float at(const NamedArray& a, std::map<std::string, std::int64_t, std::less<>> idx) { return a.value_at(idx); }

double norm(const NamedArray& a) {
  double s = 0;
  for (std::int64_t i = 0; i < a.size(); ++i) s += static_cast<double>(a.value_at(i)) * a.value_at(i);
  return std::sqrt(s);
}

// ||jvp - central difference|| / ||central difference||.
double jvp_error(const Value& layer, const NamedArray& x, const NamedArray& dx, const nn::SideInputs& side = {},
                 float eps = 1e-2f) {
  const auto [primal, tangent] = nn::jvp(layer, x, dx, side);
  const auto plus = nn::forward(layer, nx::add(x, nx::scale(dx, eps)), side);
  const auto minus = nn::forward(layer, nx::sub(x, nx::scale(dx, eps)), side);
  const auto fd = nx::scale(nx::sub(plus, minus), 0.5f / eps);
  CHECK(nx::max_abs_diff(primal, nn::forward(layer, x, side)) <= 1e-6f);
  return norm(nx::sub(tangent, fd)) / std::max(norm(fd), 1e-12);
}

nn::SideInputs positions(std::int64_t n) {
  std::vector<std::int32_t> p(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(i);
  return {{"q_pos", NamedArray::ints({{"seq", n}}, {}, p)}, {"k_pos", NamedArray::ints({{"kv", n}}, {}, p)}};
}

// Single-head attention over {seq, e} with identity projections.
Value bare_attention() {
  return nn::attention(nn::sequential({}), nn::rename_axes("seq", "kv"), nn::rename_axes("seq", "kv"),
                       nn::sequential({nn::contract_with_side_input({"e"}, nn::kAttnAux),
                                       nn::causal_mask("q_pos", "k_pos"), nn::softmax({"kv"})}),
                       nn::contract_with_side_input({"kv"}, nn::kAttnAux));
}

}  // namespace

TEST_CASE("Linear contracts input axes against weights") {
  Rng rng(1);
  auto w = tree::make_parameter("w", testing::random_floats(rng, {{"in", 3}, {"out", 4}}));
  const Value layer = nn::linear(w, {"in"}, {"out"});
  const auto x = testing::random_floats(rng, {{"batch", 2}, {"in", 3}});
  const auto y = nn::forward(layer, x);
  REQUIRE(y.named_shape() == NamedShape{{"batch", 2}, {"out", 4}});
  for (std::int64_t b = 0; b < 2; ++b) {
    for (std::int64_t o = 0; o < 4; ++o) {
      double s = 0;
      for (std::int64_t i = 0; i < 3; ++i) s += at(x, {{"batch", b}, {"in", i}}) * at(w->value(), {{"in", i}, {"out", o}});
      CHECK(at(y, {{"batch", b}, {"out", o}}) == doctest::Approx(s).epsilon(1e-6));
    }
  }
}

TEST_CASE("combinators route values without arithmetic of their own") {
  Rng rng(2);
  const auto x = testing::random_floats(rng, {{"a", 5}});
  const Value relu = nn::elementwise("relu");
  const Value tanh = nn::elementwise("tanh");
  const auto r = nn::forward(relu, x);
  const auto t = nn::forward(tanh, x);
  CHECK(modelforge::bitwise_equal(nn::forward(nn::sequential({}), x), x));
  CHECK(modelforge::bitwise_equal(nn::forward(nn::sequential({relu, tanh}), x), nn::forward(tanh, r)));
  CHECK(modelforge::bitwise_equal(nn::forward(nn::branch_and_add({relu, tanh}), x), nx::add(r, t)));
  CHECK(modelforge::bitwise_equal(nn::forward(nn::branch_and_multiply({relu, tanh}), x), nx::mul(r, t)));
  CHECK(modelforge::bitwise_equal(nn::forward(nn::residual(relu), x), nx::add(x, r)));
}

TEST_CASE("elementwise functions match their formulas") {
  const auto x = NamedArray::floats({{"a", 4}}, {}, {-2.0f, -0.5f, 0.0f, 1.5f});
  for (std::int64_t i = 0; i < 4; ++i) {
    const double v = x.value_at(i);
    CHECK(nn::forward(nn::elementwise("relu"), x).value_at(i) == (v > 0 ? v : 0));
    CHECK(nn::forward(nn::elementwise("silu"), x).value_at(i) == doctest::Approx(v / (1 + std::exp(-v))));
    const double g = 0.5 * v * (1 + std::tanh(std::sqrt(2 / M_PI) * (v + 0.044715 * v * v * v)));
    CHECK(nn::forward(nn::elementwise("gelu_tanh"), x).value_at(i) == doctest::Approx(g));
  }
  CHECK_THROWS_AS(nn::forward(nn::elementwise("nope"), x), ForwardError);
}

TEST_CASE("LayerNorm and RMSNorm match loop oracles") {
  Rng rng(3);
  const auto x = testing::random_floats(rng, {{"row", 3}, {"e", 6}});
  auto scale = tree::make_parameter("s", testing::random_floats(rng, {{"e", 6}}));
  auto bias = tree::make_parameter("b", testing::random_floats(rng, {{"e", 6}}));
  const auto ln = nn::forward(nn::layer_norm(scale, bias, "e", 1e-5f), x);
  const auto rms = nn::forward(nn::rms_norm(scale, "e", 1e-6f), x);
  for (std::int64_t r = 0; r < 3; ++r) {
    double mean = 0, sq = 0;
    for (std::int64_t e = 0; e < 6; ++e) {
      mean += at(x, {{"e", e}, {"row", r}});
      sq += std::pow(at(x, {{"e", e}, {"row", r}}), 2);
    }
    mean /= 6;
    double var = 0;
    for (std::int64_t e = 0; e < 6; ++e) var += std::pow(at(x, {{"e", e}, {"row", r}}) - mean, 2);
    var /= 6;
    for (std::int64_t e = 0; e < 6; ++e) {
      const double v = at(x, {{"e", e}, {"row", r}});
      const double s = at(scale->value(), {{"e", e}});
      const double expected_ln = (v - mean) / std::sqrt(var + 1e-5) * s + at(bias->value(), {{"e", e}});
      const double expected_rms = v / std::sqrt(sq / 6 + 1e-6) * s;
      CHECK(at(ln, {{"e", e}, {"row", r}}) == doctest::Approx(expected_ln).epsilon(1e-5));
      CHECK(at(rms, {{"e", e}, {"row", r}}) == doctest::Approx(expected_rms).epsilon(1e-5));
    }
  }
}

TEST_CASE("causal mask hides later key positions") {
  const auto logits = NamedArray::full({{"kv", 3}, {"seq", 3}}, 1.0f);
  const auto side = positions(3);
  const auto masked = nn::apply_causal_mask(logits, side.at("q_pos"), side.at("k_pos"), -5.0f);
  for (std::int64_t q = 0; q < 3; ++q) {
    for (std::int64_t k = 0; k < 3; ++k) CHECK(at(masked, {{"kv", k}, {"seq", q}}) == (k > q ? -5.0f : 1.0f));
  }
}

TEST_CASE("RoPE rotates pairs and keeps relative-position dot products") {
  Rng rng(4);
  const auto x = testing::random_floats(rng, {{"p", 8}});
  auto pos = [](std::int32_t p) { return NamedArray::scalar_int(p); };
  const auto r0 = nn::rope(x, pos(0), "p", 10000.0f);
  CHECK(nx::max_abs_diff(r0, x) <= 1e-7f);
  const auto r3 = nn::rope(x, pos(3), "p", 10000.0f);
  // Pair (0, 4) at frequency 1 rotates by angle 3.
  const double a = x.value_at(0), b = x.value_at(4);
  CHECK(r3.value_at(0) == doctest::Approx(a * std::cos(3.0) - b * std::sin(3.0)).epsilon(1e-5));
  CHECK(r3.value_at(4) == doctest::Approx(b * std::cos(3.0) + a * std::sin(3.0)).epsilon(1e-5));
  CHECK(norm(r3) == doctest::Approx(norm(x)).epsilon(1e-5));
  const auto y = testing::random_floats(rng, {{"p", 8}});
  auto dot = [](const NamedArray& u, const NamedArray& v) { return nx::contract({"p"}, u, v).value_at(0); };
  const double d1 = dot(nn::rope(x, pos(5), "p", 100.0f), nn::rope(y, pos(2), "p", 100.0f));
  const double d2 = dot(nn::rope(x, pos(7), "p", 100.0f), nn::rope(y, pos(4), "p", 100.0f));
  CHECK(d1 == doctest::Approx(d2).epsilon(1e-4));
}

TEST_CASE("embedding lookup and decode") {
  auto table = tree::make_parameter("t", NamedArray::floats({{"e", 2}, {"vocab", 3}}, {}, {1, 2, 3, 4, 5, 6}));
  const auto ids = NamedArray::ints({{"seq", 2}}, {}, {2, 0});
  const auto emb = nn::forward(nn::embedding_lookup(table, "vocab"), ids);
  REQUIRE(emb.named_shape() == NamedShape{{"e", 2}, {"seq", 2}});
  CHECK(at(emb, {{"e", 0}, {"seq", 0}}) == 3);
  CHECK(at(emb, {{"e", 1}, {"seq", 0}}) == 6);
  CHECK(at(emb, {{"e", 1}, {"seq", 1}}) == 4);
  const auto logits = nn::forward(nn::embedding_decode(table, "vocab"), emb);
  CHECK(at(logits, {{"seq", 1}, {"vocab", 2}}) == 1 * 3 + 4 * 6);
  CHECK_THROWS_AS(nn::forward(nn::embedding_lookup(table, "vocab"), NamedArray::ints({{"seq", 1}}, {}, {3})),
                  ForwardError);
}

TEST_CASE("Attention routes queries, keys and values through its children") {
  Rng rng(5);
  const auto x = testing::random_floats(rng, {{"e", 2}, {"seq", 3}});
  const auto y = nn::forward(bare_attention(), x, positions(3));
  REQUIRE(y.named_shape() == NamedShape{{"e", 2}, {"seq", 3}});
  for (std::int64_t q = 0; q < 3; ++q) {
    std::vector<double> w;
    double total = 0;
    for (std::int64_t k = 0; k <= q; ++k) {
      double s = 0;
      for (std::int64_t e = 0; e < 2; ++e) s += at(x, {{"e", e}, {"seq", q}}) * at(x, {{"e", e}, {"seq", k}});
      w.push_back(std::exp(s));
      total += w.back();
    }
    for (std::int64_t e = 0; e < 2; ++e) {
      double o = 0;
      for (std::int64_t k = 0; k <= q; ++k) o += w[k] / total * at(x, {{"e", e}, {"seq", k}});
      CHECK(at(y, {{"e", e}, {"seq", q}}) == doctest::Approx(o).epsilon(1e-5));
    }
  }
}

TEST_CASE("forward errors name the failing layer and path") {
  auto w = tree::make_parameter("w", NamedArray::zeros({{"in", 3}, {"out", 2}}));
  const Value model = nn::sequential({nn::elementwise("relu"), nn::linear(w, {"in"}, {"out"})});
  try {
    nn::forward(model, NamedArray::zeros({{"other", 3}}));
    FAIL("expected a ForwardError");
  } catch (const ForwardError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("Linear") != std::string::npos);
    CHECK(msg.find("model.children[1]") != std::string::npos);
  }
}

TEST_CASE("trace lists executed primitives in order") {
  const Value model = nn::sequential({nn::elementwise("relu"), nn::residual(nn::constant_rescale(2.0f))});
  nn::Trace trace;
  nn::forward(model, NamedArray::zeros({{"a", 1}}), {}, &trace);
  CHECK(trace == nn::Trace{"Elementwise", "ConstantRescale"});
}

TEST_CASE("frozen variables reject writes and unfreeze copies") {
  auto state = tree::make_state("counter", NamedArray::zeros({{"a", 1}}));
  const Value root = nn::sequential({nn::add_bias(state)});
  const Value frozen = nn::freeze(root);
  auto fv = tree::variables(frozen)[0];
  CHECK(fv->frozen());
  CHECK_THROWS_AS(fv->set_value(NamedArray::full({{"a", 1}}, 1.0f)), FrozenVariableError);
  const Value thawed = nn::unfreeze(frozen);
  auto tv = tree::variables(thawed)[0];
  tv->set_value(NamedArray::full({{"a", 1}}, 3.0f));
  CHECK(fv->value().value_at(0) == 0.0f);
  CHECK(state->value().value_at(0) == 0.0f);
  CHECK(tv->value().value_at(0) == 3.0f);
}

TEST_CASE("clone_mutable copies mutable variables and shares frozen ones") {
  auto a = tree::make_parameter("a", NamedArray::zeros({{"x", 1}}));
  auto b = std::make_shared<tree::Variable>("b", tree::VarKind::kParameter, NamedArray::zeros({{"x", 1}}), true);
  const Value root = nn::sequential({nn::add_bias(a), nn::add_bias(b)});
  const Value copy = nn::clone_mutable(root);
  const auto vars = tree::variables(copy);
  CHECK(vars[0] != a);
  CHECK(vars[1] == b);
  vars[0]->set_value(NamedArray::full({{"x", 1}}, 2.0f));
  CHECK(a->value().value_at(0) == 0.0f);
}

TEST_CASE("jvp matches central differences for each primitive") {
  Rng rng(6);
  const NamedShape shape{{"e", 4}, {"seq", 3}};
  auto w = tree::make_parameter("w", testing::random_floats(rng, {{"e", 4}, {"o", 3}}));
  auto s = tree::make_parameter("s", testing::random_floats(rng, {{"e", 4}}));
  auto bias = tree::make_parameter("b", testing::random_floats(rng, {{"e", 4}}));
  const std::vector<std::pair<std::string, Value>> layers = {
      {"linear", nn::linear(w, {"e"}, {"o"})},
      {"bias", nn::add_bias(bias)},
      {"gelu", nn::elementwise("gelu_tanh")},
      {"silu", nn::elementwise("silu")},
      {"tanh", nn::elementwise("tanh")},
      {"softmax", nn::softmax({"e"})},
      {"layer_norm", nn::layer_norm(s, bias, "e")},
      {"rms_norm", nn::rms_norm(s, "e")},
      {"rescale", nn::constant_rescale(0.3f)},
      {"rope", nn::apply_rope("e", "q_pos", 100.0f)},
      {"rename", nn::rename_axes("seq", "kv")},
      {"attention", bare_attention()},
      {"mlp", nn::sequential({nn::linear(w, {"e"}, {"o"}), nn::elementwise("gelu_tanh")})},
      {"residual", nn::residual(nn::sequential({nn::layer_norm(s, bias, "e"), nn::elementwise("tanh")}))},
  };
  for (const auto& [name, layer] : layers) {
    CAPTURE(name);
    const auto x = testing::random_floats(rng, shape);
    const auto dx = testing::random_floats(rng, shape);
    CHECK(jvp_error(layer, x, dx, positions(3)) <= 1e-3);
  }
}

TEST_CASE("parameter tangents match finite differences in the weights") {
  Rng rng(7);
  const NamedArray w0 = testing::random_floats(rng, {{"e", 4}, {"o", 3}});
  const NamedArray dw = testing::random_floats(rng, {{"e", 4}, {"o", 3}});
  const auto x = testing::random_floats(rng, {{"e", 4}, {"seq", 2}});
  auto build = [&](const NamedArray& weights) {
    return nn::sequential({nn::linear(tree::make_parameter("w", weights), {"e"}, {"o"}), nn::elementwise("tanh")});
  };
  const auto result = nn::jvp_general(build(w0), x, std::nullopt, {}, {{"w", dw}});
  REQUIRE(result.tangent.has_value());
  const float eps = 1e-2f;
  const auto fd = nx::scale(nx::sub(nn::forward(build(nx::add(w0, nx::scale(dw, eps))), x),
                                    nn::forward(build(nx::sub(w0, nx::scale(dw, eps))), x)),
                            0.5f / eps);
  CHECK(norm(nx::sub(*result.tangent, fd)) / norm(fd) <= 1e-3);
}

TEST_CASE("LinearizeAndAdjust is exact on a linear target") {
  Rng rng(8);
  auto w = tree::make_parameter("w", testing::random_floats(rng, {{"e", 4}, {"o", 3}}));
  const Value target = nn::linear(w, {"e"}, {"o"});
  const auto x = testing::random_floats(rng, {{"e", 4}, {"worlds", 3}});
  const auto exact = nn::forward(target, x);
  const auto lin = nn::forward(nn::linearize_and_adjust(target, "worlds", 1), x);
  CHECK(nx::max_abs_diff(exact, lin) <= 1e-6f);
}

TEST_CASE("LinearizeAndAdjust error shrinks quadratically on a gelu MLP") {
  Rng rng(9);
  auto w1 = tree::make_parameter("w1", testing::random_floats(rng, {{"e", 4}, {"h", 6}}));
  auto w2 = tree::make_parameter("w2", testing::random_floats(rng, {{"e", 4}, {"h", 6}}));
  const Value mlp = nn::sequential({nn::linear(w1, {"e"}, {"h"}), nn::elementwise("gelu_tanh"),
                                    nn::linear(w2, {"h"}, {"e"})});
  const Value lin = nn::linearize_and_adjust(mlp, "worlds", 0);
  const auto x0 = testing::random_floats(rng, {{"e", 4}});
  const auto delta = testing::random_floats(rng, {{"e", 4}});
  auto error_at = [&](float scale) {
    const NamedArray parts[] = {x0, nx::add(x0, nx::scale(delta, scale))};
    const auto x = nx::stack(parts, "worlds");
    const auto diff = nx::sub(nn::forward(lin, x), nn::forward(mlp, x));
    return norm(nx::slice(diff, "worlds", 1));
  };
  const double e1 = error_at(0.4f), e2 = error_at(0.2f), e3 = error_at(0.1f);
  CHECK(e1 / e2 >= 3.0);
  CHECK(e2 / e3 >= 3.0);
  // The reference world is reproduced exactly.
  const NamedArray parts[] = {x0, nx::add(x0, delta)};
  const auto x = nx::stack(parts, "worlds");
  CHECK(nx::max_abs_diff(nx::slice(nn::forward(lin, x), "worlds", 0), nn::forward(mlp, x0)) <= 1e-6f);
}

TEST_CASE("Rewire copies the source world into destinations") {
  const auto x = NamedArray::floats({{"worlds", 3}, {"e", 2}}, {}, {0, 1, 2, 3, 4, 5});  // e outer
  const auto y = nn::forward(nn::rewire("worlds", 2, {0}), x);
  for (std::int64_t e = 0; e < 2; ++e) {
    CHECK(at(y, {{"e", e}, {"worlds", 0}}) == at(x, {{"e", e}, {"worlds", 2}}));
    CHECK(at(y, {{"e", e}, {"worlds", 1}}) == at(x, {{"e", e}, {"worlds", 1}}));
  }
  CHECK(modelforge::bitwise_equal(nn::forward(nn::rewire("worlds", 1, {1}), x), x));
  CHECK_THROWS_AS(nn::forward(nn::rewire("worlds", 3, {0}), x), ForwardError);
  CHECK_THROWS_AS(nn::forward(nn::rewire("other", 0, {1}), x), ForwardError);
}

TEST_CASE("layers without a JVP rule say so") {
  auto counter = tree::make_state("c", NamedArray::scalar_int(0));
  const Value layer = nn::advance_position_counter(counter, "seq");
  const auto x = NamedArray::zeros({{"seq", 2}});
  CHECK_THROWS_AS(nn::jvp(layer, x, x), ForwardError);
}
