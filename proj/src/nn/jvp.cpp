#include <cmath>
#include <optional>

#include "modelforge/error.hpp"
#include "modelforge/nn.hpp"
#include "nn/internal.hpp"

namespace modelforge::nn {

using tree::Node;
using tree::TreePath;

namespace {

using Tangent = std::optional<NamedArray>;
using SideTangents = std::map<std::string, NamedArray, std::less<>>;

Tangent plus(const Tangent& a, const Tangent& b) {
  if (!a) return b;
  if (!b) return a;
  return nx::add(*a, *b);
}

Tangent mul_by(const Tangent& t, const NamedArray& factor) {
  if (!t) return std::nullopt;
  return nx::mul(*t, factor);
}

// `t` broadcast so it carries every named axis of `like` (plus its own).
NamedArray widen(const NamedArray& t, const NamedArray& like) {
  NamedShape target = t.named_shape();
  for (const auto& [name, size] : like.named_shape()) target.emplace(name, size);
  return nx::broadcast_to(t, target);
}

// Sum of `a` over each of `axes`.
NamedArray sum_over(NamedArray a, const AxisNames& axes) {
  for (const auto& name : axes) a = nx::reduce(nx::ReduceOp::kSum, a, name);
  return a;
}

class JvpRunner {
 public:
  explicit JvpRunner(const ParamTangents& params) : params_(params) {}

  JvpResult run(const Value& layer, const NamedArray& x, const Tangent& dx, const SideInputs& side,
                const SideTangents& dside, const TreePath& path) {
    if (!layer.is_node()) throw ForwardError("non-layer value at " + path.to_string());
    const Node& node = *layer.as_node();
    const std::string& kind = detail::builtin_name(node.kind());

    if (kind == "Sequential") {
      JvpResult h{x, dx};
      const auto& kids = node.field("children").as_list();
      for (std::size_t i = 0; i < kids.size(); ++i) {
        h = run(kids[i], h.primal, h.tangent, side, dside,
                path.child("children").child(static_cast<std::int64_t>(i)));
      }
      return h;
    }
    if (kind == "BranchAndAddTogether" || kind == "BranchAndMultiplyTogether") {
      const auto& branches = node.field("branches").as_list();
      if (branches.empty()) throw ForwardError(kind + " with no branches at " + path.to_string());
      const bool add = kind == "BranchAndAddTogether";
      std::optional<JvpResult> acc;
      for (std::size_t i = 0; i < branches.size(); ++i) {
        JvpResult y = run(branches[i], x, dx, side, dside, path.child("branches").child(static_cast<std::int64_t>(i)));
        if (!acc) {
          acc = y;
        } else if (add) {
          acc = JvpResult{nx::add(acc->primal, y.primal), plus(acc->tangent, y.tangent)};
        } else {
          acc = JvpResult{nx::mul(acc->primal, y.primal),
                          plus(mul_by(acc->tangent, y.primal), mul_by(y.tangent, acc->primal))};
        }
      }
      return *acc;
    }
    if (kind == "Residual") {
      JvpResult b = run(node.field("body"), x, dx, side, dside, path.child("body"));
      return {nx::add(x, b.primal), plus(dx, b.tangent)};
    }
    if (kind == "Attention") {
      JvpResult q = run(node.field("input_to_query"), x, dx, side, dside, path.child("input_to_query"));
      JvpResult k = run(node.field("input_to_key"), x, dx, side, dside, path.child("input_to_key"));
      JvpResult v = run(node.field("input_to_value"), x, dx, side, dside, path.child("input_to_value"));
      auto with_aux = [&](const JvpResult& aux, SideInputs& s, SideTangents& ds) {
        s = side;
        ds = dside;
        s[kAttnAux] = aux.primal;
        ds.erase(std::string(kAttnAux));
        if (aux.tangent) ds[kAttnAux] = *aux.tangent;
      };
      SideInputs s1, s2;
      SideTangents d1, d2;
      with_aux(k, s1, d1);
      JvpResult w = run(node.field("query_key_to_attn"), q.primal, q.tangent, s1, d1, path.child("query_key_to_attn"));
      with_aux(v, s2, d2);
      return run(node.field("attn_value_to_output"), w.primal, w.tangent, s2, d2, path.child("attn_value_to_output"));
    }
    if (kind == "KVCachingAttention" || kind == "AdvancePositionCounter" || kind == "LinearizeAndAdjust") {
      throw ForwardError("no JVP rule for " + node.kind_name() + " at " + path.to_string());
    }
    try {
      return primitive(kind, node, layer, x, dx, side, dside);
    } catch (const Error& e) {
      throw ForwardError(node.kind_name() + " at " + path.to_string() + ": " + e.what());
    }
  }

 private:
  Tangent param(const Value& var) const {
    auto it = params_.find(var.as_variable()->label());
    if (it == params_.end()) return std::nullopt;
    return it->second;
  }

  JvpResult primitive(const std::string& kind, const Node& node, const Value& layer, const NamedArray& x,
                      const Tangent& dx, const SideInputs& side, const SideTangents& dside) {
    if (kind == "Linear") {
      const AxisNames in = detail::strings_of(node.field("input_axes"));
      const NamedArray& w = node.field("weights").as_variable()->value();
      Tangent dy;
      if (dx) dy = nx::contract(in, *dx, w);
      if (auto dw = param(node.field("weights"))) dy = plus(dy, nx::contract(in, x, *dw));
      return {nx::contract(in, x, w), dy};
    }
    if (kind == "AddBias") {
      return {nx::add(x, node.field("bias").as_variable()->value()), plus(dx, param(node.field("bias")))};
    }
    if (kind == "Elementwise") {
      const std::string fn = node.field("fn").as_string();
      if (!detail::known_elementwise(fn)) throw ForwardError("unknown elementwise fn '" + fn + "'");
      NamedArray y = nx::map(x, [&](float v) { return detail::elementwise_value(fn, v); });
      if (!dx) return {y, std::nullopt};
      return {y, nx::mul(*dx, nx::map(x, [&](float v) { return detail::elementwise_derivative(fn, v); }))};
    }
    if (kind == "Softmax") {
      const AxisNames axes = detail::strings_of(node.field("axes"));
      NamedArray s = nx::softmax(x, axes);
      if (!dx) return {s, std::nullopt};
      const NamedArray sdz = nx::mul(s, *dx);
      return {s, nx::mul(s, nx::sub(*dx, sum_over(sdz, axes)))};
    }
    if (kind == "ApplyCausalAttentionMask") {
      const NamedArray& qpos = detail::side_input(side, node.field("query_pos_side_input").as_string());
      const NamedArray& kvpos = detail::side_input(side, node.field("kv_pos_side_input").as_string());
      NamedArray y = apply_causal_mask(x, qpos, kvpos, node.field("masked_value").as_float());
      if (!dx) return {y, std::nullopt};
      return {y, apply_causal_mask(widen(*dx, x), qpos, kvpos, 0.0f)};
    }
    if (kind == "EmbeddingLookup") {
      const NamedArray& table = node.field("table").as_variable()->value();
      const std::string& vocab = node.field("vocab_axis").as_string();
      const NamedArray hot = detail::one_hot(x, vocab, table.axis_size(vocab));
      const std::string axes[] = {vocab};
      Tangent dy;
      if (auto dt = param(node.field("table"))) dy = nx::contract(axes, hot, *dt);
      return {nx::contract(axes, hot, table), dy};
    }
    if (kind == "EmbeddingDecode") {
      const NamedArray& table = node.field("table").as_variable()->value();
      const AxisNames axes = detail::table_feature_axes(table, node.field("vocab_axis").as_string());
      Tangent dy;
      if (dx) dy = nx::contract(axes, *dx, table);
      if (auto dt = param(node.field("table"))) dy = plus(dy, nx::contract(axes, x, *dt));
      return {nx::contract(axes, x, table), dy};
    }
    if (kind == "LayerNorm" || kind == "RMSNorm") {
      const bool rms = kind == "RMSNorm";
      const std::string& axis = node.field("axis").as_string();
      const float eps = node.field("epsilon").as_float();
      const NamedArray& scale = node.field("scale").as_variable()->value();
      const NamedArray centered = rms ? nx::to_float(x) : nx::sub(x, nx::reduce(nx::ReduceOp::kMean, x, axis));
      const NamedArray var = nx::reduce(nx::ReduceOp::kMean, nx::mul(centered, centered), axis);
      const NamedArray r = nx::map(var, [eps](float v) { return 1.0f / std::sqrt(v + eps); });
      const NamedArray y_hat = nx::mul(centered, r);
      NamedArray y = nx::mul(y_hat, scale);
      Tangent dy;
      if (dx) {
        const NamedArray dc = rms ? *dx : nx::sub(*dx, nx::reduce(nx::ReduceOp::kMean, *dx, axis));
        const NamedArray proj = nx::reduce(nx::ReduceOp::kMean, nx::mul(y_hat, dc), axis);
        const NamedArray dy_hat = nx::mul(r, nx::sub(dc, nx::mul(y_hat, proj)));
        dy = nx::mul(dy_hat, scale);
      }
      if (auto ds = param(node.field("scale"))) dy = plus(dy, nx::mul(y_hat, *ds));
      if (!rms) {
        y = nx::add(y, node.field("bias").as_variable()->value());
        dy = plus(dy, param(node.field("bias")));
      }
      return {y, dy};
    }
    if (kind == "ContractWithSideInput") {
      const AxisNames axes = detail::strings_of(node.field("axes"));
      const std::string& name = node.field("side_input").as_string();
      const NamedArray& other = detail::side_input(side, name);
      Tangent dy;
      if (dx) dy = nx::contract(axes, *dx, other);
      if (auto it = dside.find(name); it != dside.end()) dy = plus(dy, nx::contract(axes, x, it->second));
      return {nx::contract(axes, x, other), dy};
    }
    if (kind == "RewireComputationPaths") {
      std::vector<std::int64_t> dst;
      for (const auto& d : node.field("destination_indices").as_list()) dst.push_back(d.as_int());
      const std::string& worlds = node.field("worlds_axis").as_string();
      const std::int64_t src = node.field("source_index").as_int();
      NamedArray y = detail::rewire_slices(x, worlds, src, dst);
      if (!dx) return {y, std::nullopt};
      return {y, detail::rewire_slices(widen(*dx, x), worlds, src, dst)};
    }
    // The remaining primitives are linear in x with no parameters, so the
    // tangent goes through the same map.
    if (kind == "ConstantRescale" || kind == "ApplyRoPE" || kind == "RenameAxes" || kind == "ConstantMultiply") {
      NamedArray y = forward(layer, x, side);
      if (!dx) return {y, std::nullopt};
      const NamedArray t = kind == "ApplyRoPE" || kind == "RenameAxes" ? widen(*dx, x) : *dx;
      return {y, forward(layer, t, side)};
    }
    throw ForwardError("no JVP rule for kind '" + kind + "'");
  }

  const ParamTangents& params_;
};

}  // namespace

JvpResult jvp_general(const Value& layer, const NamedArray& x0, const std::optional<NamedArray>& dx,
                      const SideInputs& side, const ParamTangents& param_tangents) {
  register_kinds();
  JvpRunner runner(param_tangents);
  return runner.run(layer, x0, dx, side, {}, TreePath());
}

std::pair<NamedArray, NamedArray> jvp(const Value& layer, const NamedArray& x0, const NamedArray& dx,
                                      const SideInputs& side) {
  JvpResult r = jvp_general(layer, x0, dx, side, {});
  NamedArray t = r.tangent ? *r.tangent : nx::zeros_like(r.primal);
  return {std::move(r.primal), std::move(t)};
}

}  // namespace modelforge::nn
