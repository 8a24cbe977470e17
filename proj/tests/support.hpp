#pragma once

// Shared fixtures for the test binaries: seeded random arrays and trees.

#include <cmath>
#include <cstdint>
#include <limits>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "modelforge/named_array.hpp"
#include "modelforge/nn.hpp"
#include "modelforge/transformer.hpp"
#include "modelforge/tree.hpp"

namespace testing {

using modelforge::AxisNames;
using modelforge::NamedArray;
using modelforge::NamedShape;
using modelforge::Shape;
using modelforge::tree::Value;
using Rng = std::mt19937_64;

inline std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
  return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
}

inline float uniform_float(Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  return std::uniform_real_distribution<float>(lo, hi)(rng);
}

inline std::int64_t product(const NamedShape& named, const Shape& positional = {}) {
  std::int64_t n = 1;
  for (const auto& [_, s] : named) n *= s;
  for (auto s : positional) n *= s;
  return n;
}

inline NamedArray random_floats(Rng& rng, const NamedShape& named, const Shape& positional = {}) {
  std::vector<float> data(static_cast<std::size_t>(product(named, positional)));
  for (auto& v : data) v = uniform_float(rng);
  return NamedArray::floats(named, positional, std::move(data));
}

inline NamedArray random_ints(Rng& rng, const NamedShape& named, const Shape& positional = {}, int lo = -20,
                              int hi = 20) {
  std::vector<std::int32_t> data(static_cast<std::size_t>(product(named, positional)));
  for (auto& v : data) v = static_cast<std::int32_t>(uniform_int(rng, lo, hi));
  return NamedArray::ints(named, positional, std::move(data));
}

// Up to `max_axes` axes drawn from a small name pool, sizes 1..max_size.
inline NamedShape random_named_shape(Rng& rng, int max_axes, std::int64_t max_size) {
  static const char* kNames[] = {"a", "b", "c", "d", "e"};
  NamedShape shape;
  const auto n = uniform_int(rng, 0, max_axes);
  while (static_cast<std::int64_t>(shape.size()) < n) {
    shape.emplace(kNames[uniform_int(rng, 0, 4)], uniform_int(rng, 1, max_size));
  }
  return shape;
}

// A kind with untyped slots, for trees holding arbitrary leaves.
inline void register_test_kinds() {
  modelforge::models::register_kinds();
  static std::once_flag once;
  std::call_once(once, [] {
    using modelforge::tree::SlotType;
    auto& reg = modelforge::tree::KindRegistry::global();
    reg.add({"Box", "tests.Box", {{"first", SlotType::kAny}, {"second", SlotType::kAny}}, ""});
    reg.add({"Pair", "tests.Pair", {{"left", SlotType::kNode}, {"right", SlotType::kNode}}, ""});
  });
}

class TreeGen {
 public:
  explicit TreeGen(std::uint64_t seed) : rng_(seed) { register_test_kinds(); }

  Rng& rng() { return rng_; }

  // Random layer tree of registered kinds; variables may repeat by label.
  Value layer(int depth) {
    namespace nn = modelforge::nn;
    const auto pick = uniform_int(rng_, 0, depth > 0 ? 11 : 5);
    switch (pick) {
      case 0: return nn::elementwise(kFns[uniform_int(rng_, 0, 3)]);
      case 1: return nn::softmax(axis_list());
      case 2: return nn::constant_rescale(uniform_float(rng_, -3.0f, 3.0f));
      case 3: {
        auto w = variable();
        return nn::linear(w, {"a"}, {"b"});
      }
      case 4: return nn::add_bias(variable());
      case 5: return nn::rewire("worlds", uniform_int(rng_, 0, 2), {uniform_int(rng_, 0, 2)});
      case 6:
      case 7: return nn::sequential(layers(depth - 1));
      case 8: return nn::branch_and_add(layers(depth - 1));
      case 9: return nn::residual(layer(depth - 1));
      case 10: return Value(modelforge::tree::Node::make("tests.Pair", {{"left", layer(depth - 1)},
                                                                        {"right", layer(depth - 1)}}));
      default: return Value(modelforge::tree::Node::make("tests.Box", {{"first", leaf(depth - 1)},
                                                                       {"second", leaf(depth - 1)}}));
    }
  }

  // Any value a Box slot can hold.
  Value leaf(int depth) {
    switch (uniform_int(rng_, 0, depth > 0 ? 10 : 8)) {
      case 0: return Value();
      case 1: return Value(static_cast<std::int64_t>(uniform_int(rng_, -1000000, 1000000)));
      case 2: return Value(special_float());
      case 3: return Value(uniform_int(rng_, 0, 1) == 1);
      case 4: return Value(random_string());
      case 5: return Value(modelforge::tree::Opaque{"blob", random_string()});
      case 6: return Value(array());
      case 7: return Value(variable());
      case 8: return layer(0);
      case 9: {
        Value::List items;
        const auto n = uniform_int(rng_, 0, 3);
        for (std::int64_t i = 0; i < n; ++i) items.push_back(leaf(depth - 1));
        return Value(std::move(items));
      }
      default: return layer(depth - 1);
    }
  }

  NamedArray array() {
    const NamedShape named = random_named_shape(rng_, 2, 3);
    Shape positional;
    if (uniform_int(rng_, 0, 3) == 0) positional.push_back(uniform_int(rng_, 0, 2));
    switch (uniform_int(rng_, 0, 2)) {
      case 0: {
        std::vector<float> data(static_cast<std::size_t>(product(named, positional)));
        for (auto& v : data) v = special_float();
        return NamedArray::floats(named, positional, std::move(data));
      }
      case 1: return random_ints(rng_, named, positional, -100000, 100000);
      default: {
        std::vector<std::int32_t> data(static_cast<std::size_t>(product(named, positional)));
        for (auto& v : data) v = static_cast<std::int32_t>(uniform_int(rng_, 0, 1));
        return NamedArray::ints(named, positional, std::move(data), modelforge::DType::kBool);
      }
    }
  }

  float special_float() {
    switch (uniform_int(rng_, 0, 9)) {
      case 0: return std::numeric_limits<float>::quiet_NaN();
      case 1: return std::numeric_limits<float>::infinity();
      case 2: return -std::numeric_limits<float>::infinity();
      case 3: return -0.0f;
      case 4: return std::numeric_limits<float>::denorm_min();
      case 5: return std::numeric_limits<float>::max();
      case 6: return 1e-30f * uniform_float(rng_);
      default: return uniform_float(rng_, -100.0f, 100.0f);
    }
  }

  std::string random_string() {
    static const std::string kChars = "abcXYZ_ .,\"\\\n\t=()[]{}#\x01";
    std::string s;
    const auto n = uniform_int(rng_, 0, 8);
    for (std::int64_t i = 0; i < n; ++i) s += kChars[static_cast<std::size_t>(uniform_int(rng_, 0, kChars.size() - 1))];
    return s;
  }

  modelforge::tree::VariablePtr variable() {
    if (!pool_.empty() && uniform_int(rng_, 0, 2) == 0) {
      return pool_[static_cast<std::size_t>(uniform_int(rng_, 0, static_cast<std::int64_t>(pool_.size()) - 1))];
    }
    const std::string label = "var" + std::to_string(pool_.size());
    NamedArray value = random_floats(rng_, {{"a", uniform_int(rng_, 1, 3)}, {"b", uniform_int(rng_, 1, 3)}});
    auto v = uniform_int(rng_, 0, 1) == 0
                 ? modelforge::tree::make_parameter(label, value)
                 : modelforge::tree::make_state(label, value);
    if (uniform_int(rng_, 0, 3) == 0) {
      v = std::make_shared<modelforge::tree::Variable>(v->label(), v->kind(), v->value(), true);
    }
    pool_.push_back(v);
    return v;
  }

 private:
  static constexpr const char* kFns[] = {"relu", "gelu_tanh", "silu", "tanh"};

  std::vector<Value> layers(int depth) {
    std::vector<Value> out;
    const auto n = uniform_int(rng_, 0, 3);
    for (std::int64_t i = 0; i < n; ++i) out.push_back(layer(depth));
    return out;
  }

  AxisNames axis_list() {
    AxisNames out{"a"};
    if (uniform_int(rng_, 0, 1)) out.push_back("b");
    return out;
  }

  Rng rng_;
  std::vector<modelforge::tree::VariablePtr> pool_;
};

}  // namespace testing
