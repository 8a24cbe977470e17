#include <cmath>

#include "modelforge/error.hpp"
#include "modelforge/transformer.hpp"
#include "nn/internal.hpp"

namespace modelforge::models {

namespace {

constexpr const char* kDirection = "__direction";

struct Targets {
  NamedArray weights;  // one-hot next token / N, zero at the last position
};

Targets next_token_targets(const NamedArray& tokens, std::int64_t vocab) {
  const std::int64_t len = tokens.axis_size(axes::kSeq);
  if (len < 2) throw AxisError("next-token loss needs at least 2 positions");
  const std::int64_t n = tokens.size() / len * (len - 1);
  std::vector<NamedArray> parts;
  for (std::int64_t t = 0; t + 1 < len; ++t) {
    parts.push_back(nn::detail::one_hot(nx::slice(tokens, axes::kSeq, t + 1), axes::kVocab, vocab));
  }
  parts.push_back(nx::zeros_like(parts.back()));
  return {nx::scale(nx::stack(parts, axes::kSeq), 1.0f / static_cast<float>(n))};
}

NamedArray log_softmax(const NamedArray& logits) {
  const std::string vocab[] = {axes::kVocab};
  return nx::apply_over_axes(logits, vocab, [](std::span<const float> in, std::span<float> out) {
    float hi = -INFINITY;
    for (float v : in) hi = std::max(hi, v);
    double total = 0.0;
    for (float v : in) total += std::exp(static_cast<double>(v - hi));
    const auto log_total = static_cast<float>(std::log(total));
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] - hi - log_total;
  });
}

float contract_all(const NamedArray& a, const NamedArray& b) {
  return nx::contract(a.axis_names(), a, b).value_at(0);
}

bool trainable(const tree::VariablePtr& v) { return v->kind() == tree::VarKind::kParameter && !v->frozen(); }

// Identity tangent: one direction per element of `value`.
NamedArray direction_basis(const NamedArray& value) {
  if (!value.positional_shape().empty() || !value.is_float()) {
    throw AxisError("trainable parameters must be fully named float arrays");
  }
  const std::int64_t n = value.size();
  std::vector<float> data(static_cast<std::size_t>(n * n), 0.0f);
  for (std::int64_t i = 0; i < n; ++i) data[static_cast<std::size_t>(i * n + i)] = 1.0f;
  Shape shape{n};
  AxisNames names{kDirection};
  for (const auto& [name, size] : value.named_shape()) {
    shape.push_back(size);
    names.push_back(name);
  }
  return NamedArray::floats({}, shape, std::move(data)).tag(names);
}

}  // namespace

float next_token_loss(const NamedArray& logits, const NamedArray& tokens) {
  const Targets t = next_token_targets(tokens, logits.axis_size(axes::kVocab));
  return -contract_all(t.weights, log_softmax(logits));
}

nn::ParamTangents loss_gradients(const Value& model, const NamedArray& tokens) {
  const nn::SideInputs side = position_inputs(tokens.axis_size(axes::kSeq), kv_offset(model));
  const NamedArray logits = nn::forward(model, tokens, side);
  const Targets t = next_token_targets(tokens, logits.axis_size(axes::kVocab));
  // d loss / d logits = softmax * (1/N on scored positions) - targets.
  const std::string vocab[] = {axes::kVocab};
  const NamedArray scored = nx::reduce(nx::ReduceOp::kSum, t.weights, axes::kVocab);
  const NamedArray g = nx::sub(nx::mul(nx::softmax(logits, vocab), scored), t.weights);

  nn::ParamTangents grads;
  for (const auto& var : tree::variables(model)) {
    if (!trainable(var)) continue;
    const NamedArray& value = var->value();
    const nn::JvpResult r = nn::jvp_general(model, tokens, std::nullopt, side, {{var->label(), direction_basis(value)}});
    if (!r.tangent) {
      grads[var->label()] = nx::zeros_like(value);
      continue;
    }
    // Tangents that never met the batch axes (e.g. from a bias) broadcast over them.
    NamedShape full = r.tangent->named_shape();
    full.insert(logits.named_shape().begin(), logits.named_shape().end());
    const NamedArray d = nx::contract(g.axis_names(), g, nx::broadcast_to(*r.tangent, full));
    auto flat = d.float_data();
    grads[var->label()] = NamedArray::floats(value.named_shape(), {}, std::vector<float>(flat.begin(), flat.end()));
  }
  return grads;
}

TrainResult train_toy(const Value& model, const NamedArray& tokens, std::int64_t steps, float lr) {
  TrainResult result{nn::clone_mutable(model), {}};
  auto loss_now = [&](std::int64_t step) {
    const float loss = next_token_loss(run(result.model, tokens), tokens);
    if (!std::isfinite(loss)) throw ForwardError("non-finite loss at step " + std::to_string(step));
    result.losses.push_back(loss);
  };
  for (std::int64_t step = 0; step < steps; ++step) {
    loss_now(step);
    const nn::ParamTangents grads = loss_gradients(result.model, tokens);
    for (const auto& var : tree::variables(result.model)) {
      if (!trainable(var)) continue;
      var->set_value(nx::sub(var->value(), nx::scale(grads.at(var->label()), lr)));
    }
  }
  loss_now(steps);
  return result;
}

}  // namespace modelforge::models
