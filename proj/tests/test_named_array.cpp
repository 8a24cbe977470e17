#include <doctest.h>

#include <cmath>
#include <functional>

#include "modelforge/error.hpp"
#include "oracles.hpp"
#include "support.hpp"

using modelforge::AxisError;
using modelforge::DType;
using modelforge::NamedArray;
using modelforge::NamedShape;
using modelforge::Shape;
namespace nx = modelforge::nx;
using testing::Rng;
using oracles::Index;
using oracles::for_each_index;
using oracles::restrict_to;

TEST_CASE("nmap matches an explicit-loop oracle on random cases") {
  const auto report = oracles::run_nmap_oracle(2024, 200);
  CHECK(report.cases == 200);
  CHECK(report.shape_mismatches == 0);
  CHECK(report.int_mismatches == 0);
  CHECK(report.worst_float_rel <= 1e-6);
}

TEST_CASE("contract matches a triple-loop oracle") {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    const std::int64_t I = testing::uniform_int(rng, 1, 4), J = testing::uniform_int(rng, 1, 5),
                       K = testing::uniform_int(rng, 1, 4), B = testing::uniform_int(rng, 1, 3);
    const auto a = testing::random_floats(rng, {{"i", I}, {"j", J}, {"batch", B}});
    const auto b = testing::random_floats(rng, {{"j", J}, {"k", K}, {"batch", B}});
    const auto c = nx::contract({"j"}, a, b);
    REQUIRE(c.named_shape() == NamedShape{{"batch", B}, {"i", I}, {"k", K}});
    for (std::int64_t bb = 0; bb < B; ++bb) {
      for (std::int64_t i = 0; i < I; ++i) {
        for (std::int64_t k = 0; k < K; ++k) {
          double s = 0;
          for (std::int64_t j = 0; j < J; ++j) {
            s += static_cast<double>(a.value_at({{"batch", bb}, {"i", i}, {"j", j}})) *
                 b.value_at({{"batch", bb}, {"j", j}, {"k", k}});
          }
          REQUIRE(std::abs(c.value_at({{"batch", bb}, {"i", i}, {"k", k}}) - s) <= 1e-5);
        }
      }
    }
  }
}

TEST_CASE("contract over several axes at once") {
  Rng rng(5);
  const auto a = testing::random_floats(rng, {{"h", 2}, {"p", 3}, {"s", 4}});
  const auto b = testing::random_floats(rng, {{"h", 2}, {"p", 3}, {"e", 5}});
  const auto c = nx::contract({"h", "p"}, a, b);
  REQUIRE(c.named_shape() == NamedShape{{"e", 5}, {"s", 4}});
  for (std::int64_t s = 0; s < 4; ++s) {
    for (std::int64_t e = 0; e < 5; ++e) {
      double acc = 0;
      for (std::int64_t h = 0; h < 2; ++h) {
        for (std::int64_t p = 0; p < 3; ++p) {
          acc += static_cast<double>(a.value_at({{"h", h}, {"p", p}, {"s", s}})) * b.value_at({{"e", e}, {"h", h}, {"p", p}});
        }
      }
      CHECK(std::abs(c.value_at({{"e", e}, {"s", s}}) - acc) <= 1e-5);
    }
  }
}

TEST_CASE("tag after untag restores the array bit for bit") {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    auto shape = testing::random_named_shape(rng, 4, 4);
    const auto a = trial % 2 ? testing::random_floats(rng, shape) : testing::random_ints(rng, shape);
    std::vector<std::string> names;
    for (const auto& [n, _] : shape) {
      if (testing::uniform_int(rng, 0, 1)) names.push_back(n);
    }
    std::shuffle(names.begin(), names.end(), rng);
    const auto u = a.untag(names);
    REQUIRE(u.positional_shape().size() == names.size());
    for (std::size_t i = 0; i < names.size(); ++i) REQUIRE(u.positional_shape()[i] == shape.at(names[i]));
    CHECK(modelforge::bitwise_equal(u.tag(names), a));
  }
}

TEST_CASE("untag orders positional axes as requested") {
  const auto a = NamedArray::floats({{"r", 2}, {"c", 3}}, {}, {0, 1, 2, 3, 4, 5});  // c outer, r inner
  const auto u = a.untag({"r", "c"});
  CHECK(u.positional_shape() == Shape{2, 3});
  for (std::int64_t r = 0; r < 2; ++r) {
    for (std::int64_t c = 0; c < 3; ++c) CHECK(u.value_at({}, {r, c}) == a.value_at({{"c", c}, {"r", r}}));
  }
}

TEST_CASE("canonical layout puts named axes in sorted order") {
  const auto a = NamedArray::zeros({{"z", 2}, {"a", 3}});
  const auto layout = a.layout();
  REQUIRE(layout.size() == 2);
  CHECK(layout[0].axis.name() == "a");
  CHECK(layout[0].stride == 2);
  CHECK(layout[1].axis.name() == "z");
}

TEST_CASE("elementwise broadcasts by name against a loop oracle") {
  Rng rng(8);
  const auto a = testing::random_floats(rng, {{"x", 3}, {"y", 2}});
  const auto b = testing::random_floats(rng, {{"y", 2}, {"z", 4}});
  const auto c = nx::sub(a, b);
  REQUIRE(c.named_shape() == NamedShape{{"x", 3}, {"y", 2}, {"z", 4}});
  for_each_index(c.named_shape(), [&](const Index& idx) {
    const float expected = a.value_at(restrict_to(idx, a.named_shape())) - b.value_at(restrict_to(idx, b.named_shape()));
    REQUIRE(c.value_at(idx) == expected);
  });
}

TEST_CASE("mismatched axis sizes are rejected") {
  const auto a = NamedArray::zeros({{"x", 3}});
  const auto b = NamedArray::zeros({{"x", 4}});
  CHECK_THROWS_AS(nx::add(a, b), AxisError);
  CHECK_THROWS_AS(nx::contract({"y"}, a, a), AxisError);
}

TEST_CASE("reduce agrees with loop sums and maxima") {
  Rng rng(21);
  const auto a = testing::random_floats(rng, {{"p", 3}, {"q", 5}});
  const auto s = nx::reduce(nx::ReduceOp::kSum, a, "q");
  const auto mx = nx::reduce(nx::ReduceOp::kMax, a, "q");
  const auto mean = nx::reduce(nx::ReduceOp::kMean, a, "p");
  for (std::int64_t p = 0; p < 3; ++p) {
    double acc = 0, best = -1e30;
    for (std::int64_t q = 0; q < 5; ++q) {
      acc += a.value_at({{"p", p}, {"q", q}});
      best = std::max<double>(best, a.value_at({{"p", p}, {"q", q}}));
    }
    CHECK(std::abs(s.value_at({{"p", p}}) - acc) <= 1e-6);
    CHECK(mx.value_at({{"p", p}}) == best);
  }
  for (std::int64_t q = 0; q < 5; ++q) {
    double acc = 0;
    for (std::int64_t p = 0; p < 3; ++p) acc += a.value_at({{"p", p}, {"q", q}});
    CHECK(std::abs(mean.value_at({{"q", q}}) - acc / 3) <= 1e-6);
  }
}

TEST_CASE("stats equal reduce over the flattened array bit for bit") {
  Rng rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    auto shape = testing::random_named_shape(rng, 3, 5);
    if (shape.empty()) shape["a"] = 3;
    const auto a = testing::random_floats(rng, shape);
    const auto st = nx::stats(a);
    std::vector<float> flat;
    for (std::int64_t i = 0; i < a.size(); ++i) flat.push_back(a.value_at(i));
    const auto count = static_cast<std::int64_t>(flat.size());
    const auto f = NamedArray::floats({{"all", count}}, {}, flat);
    const float mean = nx::reduce(nx::ReduceOp::kMean, f, "all").float_data()[0];
    CHECK(static_cast<float>(st.mean) == mean);
    CHECK(static_cast<float>(st.max) == nx::reduce(nx::ReduceOp::kMax, f, "all").float_data()[0]);
    CHECK(static_cast<float>(st.min) == -nx::reduce(nx::ReduceOp::kMax, nx::scale(f, -1.0f), "all").float_data()[0]);
    const auto sq = nx::map(f, [mean](float v) { return (v - mean) * (v - mean); });
    CHECK(static_cast<float>(st.std) == std::sqrt(nx::reduce(nx::ReduceOp::kMean, sq, "all").float_data()[0]));
    CHECK(st.total_count == a.size());
    // Independent double-precision check.
    double s = 0;
    for (float v : flat) s += v;
    CHECK(std::abs(st.mean - s / count) <= 1e-6);
  }
}

TEST_CASE("stats skip non-finite values and count them") {
  const float inf = std::numeric_limits<float>::infinity();
  const auto a = NamedArray::floats({{"x", 5}}, {}, {1.0f, 0.0f, inf, std::nanf(""), 3.0f});
  const auto st = nx::stats(a);
  CHECK(st.count_nonfinite == 2);
  CHECK(st.count_zero == 1);
  CHECK(st.total_count == 5);
  CHECK(st.mean == doctest::Approx(4.0 / 3.0));
  CHECK(st.min == 0.0);
  CHECK(st.max == 3.0);
  CHECK_THROWS_AS(nx::stats(NamedArray::zeros({{"x", 0}})), AxisError);
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
  Rng rng(4);
  const auto a = testing::random_floats(rng, {{"r", 3}, {"v", 6}});
  const std::string ax[] = {"v"};
  const auto s = nx::softmax(a, ax);
  const auto shifted = nx::softmax(nx::add(a, NamedArray::full({{"r", 3}}, 50.0f)), ax);
  const auto total = nx::reduce(nx::ReduceOp::kSum, s, "v");
  for (std::int64_t r = 0; r < 3; ++r) CHECK(total.value_at({{"r", r}}) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(nx::max_abs_diff(s, shifted) <= 1e-6f);
}

TEST_CASE("slice, set_slice and update_range") {
  const auto a = NamedArray::floats({{"w", 3}, {"x", 2}}, {}, {0, 1, 2, 3, 4, 5});
  const auto s1 = nx::slice(a, "w", 1);
  CHECK(s1.named_shape() == NamedShape{{"x", 2}});
  CHECK(s1.value_at(0) == 2);
  const auto b = nx::set_slice(a, "w", 2, s1);
  CHECK(b.value_at({{"w", 2}, {"x", 1}}) == 3);
  CHECK(b.value_at({{"w", 0}, {"x", 1}}) == 1);
  const auto cache = NamedArray::zeros({{"t", 5}});
  const auto written = nx::update_range(cache, "t", 2, NamedArray::floats({{"t", 2}}, {}, {7, 8}));
  CHECK(written.value_at(2) == 7);
  CHECK(written.value_at(3) == 8);
  CHECK(written.value_at(4) == 0);
  CHECK_THROWS_AS(nx::update_range(cache, "t", 4, NamedArray::floats({{"t", 2}}, {}, {7, 8})), AxisError);
}

TEST_CASE("stack adds a new outer axis") {
  const auto a = NamedArray::floats({{"x", 2}}, {}, {1, 2});
  const auto b = NamedArray::floats({{"x", 2}}, {}, {3, 4});
  const NamedArray parts[] = {a, b};
  const auto s = nx::stack(parts, "w");
  CHECK(s.named_shape() == NamedShape{{"w", 2}, {"x", 2}});
  CHECK(s.value_at({{"w", 1}, {"x", 0}}) == 3);
}
