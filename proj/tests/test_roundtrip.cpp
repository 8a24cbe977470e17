#include <doctest.h>

#include <bit>
#include <cstring>

#include "modelforge/error.hpp"
#include "modelforge/roundtrip.hpp"
#include "modelforge/selection.hpp"
#include "support.hpp"

using modelforge::NamedArray;
using modelforge::ParseError;
namespace models = modelforge::models;
namespace rt = modelforge::rt;
namespace tree = modelforge::tree;
using testing::Rng;
using tree::Value;

namespace {

void check_roundtrip(const Value& root) {
  const std::string text = rt::serialize(root);
  const Value back = rt::parse(text);
  REQUIRE(tree::structurally_equal(back, root));
  REQUIRE(rt::serialize(back) == text);
}

struct Malformed {
  const char* doc;
  std::size_t line;
  std::size_t column;
};

}  // namespace

TEST_CASE("random trees survive parse after serialize") {
  testing::TreeGen gen(77);
  for (int trial = 0; trial < 200; ++trial) check_roundtrip(gen.layer(4));
}

TEST_CASE("models and their transformed versions survive the round trip") {
  for (auto variant : {models::Variant::kLlamaSequential, models::Variant::kNeoxParallel}) {
    models::TransformerConfig c;
    c.variant = variant;
    const Value base = models::build(c);
    check_roundtrip(base);
    check_roundtrip(models::loraify_all(base, 2, 4.0f, 1));
    check_roundtrip(models::enable_kv_caching(base, 8, {{"batch", 2}}));
    check_roundtrip(models::patch_activations(base, "TransformerBlock", "worlds", 0, {1, 2}));
    check_roundtrip(models::linearize(base, "TransformerFeedForward", "worlds", 0));
  }
}

TEST_CASE("parsed documents keep variable sharing") {
  auto w = tree::make_parameter("w", NamedArray::zeros({{"a", 2}, {"b", 2}}));
  const Value root = modelforge::nn::sequential({modelforge::nn::linear(w, {"a"}, {"b"}),
                                                 modelforge::nn::linear(w, {"a"}, {"b"})});
  const std::string text = rt::serialize(root);
  CHECK(text.find("VarRef(label=\"w\")") != std::string::npos);
  const Value back = rt::parse(text);
  const auto vars = tree::variables(back);
  REQUIRE(vars.size() == 1);
  CHECK(tree::resolve(back, tree::TreePath::parse("m.children[0].weights")).as_variable() ==
        tree::resolve(back, tree::TreePath::parse("m.children[1].weights")).as_variable());
}

TEST_CASE("format_float is the shortest text that reads back exactly") {
  Rng rng(5);
  for (int i = 0; i < 20000; ++i) {
    const auto bits = static_cast<std::uint32_t>(rng());
    const float x = std::bit_cast<float>(bits);
    const std::string text = rt::format_float(x);
    if (std::isnan(x)) {
      CHECK(text == "nan");
      continue;
    }
    REQUIRE(std::bit_cast<std::uint32_t>(std::strtof(text.c_str(), nullptr)) == bits);
    const bool marked = text.find_first_of(".e") != std::string::npos || text == "inf" || text == "-inf";
    REQUIRE(marked);
  }
  CHECK(rt::format_float(1.0f) == "1.0");
  CHECK(rt::format_float(0.1f) == "0.1");
  CHECK(rt::format_float(-0.0f) == "-0.0");
  CHECK(rt::format_float(1e30f) == "1e+30");
}

TEST_CASE("header is optional but must be the known version when present") {
  const char* body = "modelforge.nn.Softmax(axes=[\"a\"])";
  const Value a = rt::parse(body);
  const Value b = rt::parse(std::string(rt::kHeader) + "\n" + body);
  CHECK(tree::structurally_equal(a, b));
  CHECK(rt::serialize(a).rfind(std::string(rt::kHeader) + "\n", 0) == 0);
  CHECK_THROWS_AS(rt::parse(std::string("#rtfmt v2\n") + body), ParseError);
}

TEST_CASE("empty lists round-trip") {
  check_roundtrip(rt::parse("modelforge.nn.Sequential(children=[])"));
  const Value nested = rt::parse("modelforge.nn.Sequential(children=[modelforge.nn.Sequential(children=[])])");
  CHECK(tree::count_nodes(nested) == 2);
  check_roundtrip(nested);
}

TEST_CASE("malformed documents report line and column") {
  const Malformed cases[] = {
      {"modelforge.nn.Softmax(axes=[\"a\"]", 1, 33},
      {"\nmodelforge.nn.Nope()", 2, 1},
      {"modelforge.nn.Softmax()", 1, 23},
      {"modelforge.nn.Softmax(axes=[\"a\"], axes=[\"b\"])", 1, 35},
      {"modelforge.nn.Softmax(axes=[\"a\")", 1, 32},
      {"modelforge.nn.Softmax(axes=[\"a])", 1, 29},
      {"modelforge.nn.Elementwise(fn=\"relu\") extra", 1, 38},
      {"modelforge.nn.ConstantRescale(by=1.)", 1, 34},
      {"modelforge.nn.ConstantRescale(\n  by=@)", 2, 6},
      {"modelforge.nn.AddBias(bias=VarRef(label=\"x\"))", 1, 41},
      {"modelforge.nn.ConstantMultiply(values=Array(dtype=float32, named={\"a\": 2}, positional=[], data=[1.0]))",
       1, 96},
      {"modelforge.nn.ConstantMultiply(values=Array(dtype=float64, named={}, positional=[], data=1.0))", 1, 51},
  };
  for (const auto& c : cases) {
    CAPTURE(c.doc);
    try {
      rt::parse(c.doc);
      FAIL("parse succeeded");
    } catch (const ParseError& e) {
      CHECK(e.line() == c.line);
      CHECK(e.column() == c.column);
      const std::string prefix = std::to_string(c.line) + ":" + std::to_string(c.column) + ": ";
      CHECK(std::string(e.what()).rfind(prefix, 0) == 0);
    }
  }
}

TEST_CASE("parse errors list what was expected") {
  try {
    rt::parse("modelforge.nn.Softmax(axes=[\"a\" \"b\"])");
    FAIL("parse succeeded");
  } catch (const ParseError& e) {
    CHECK(e.expected() == std::vector<std::string>{"','", "']'"});
  }
}
