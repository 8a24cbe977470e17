#include "modelforge/transformer.hpp"

#include <cmath>
#include <mutex>

#include "modelforge/error.hpp"
#include "modelforge/selection.hpp"

namespace modelforge::models {

using nn::Initializer;
using tree::KindInfo;
using tree::KindRegistry;
using tree::SlotType;
using tree::TreePath;
using tree::VariablePtr;

std::string_view variant_name(Variant v) { return v == Variant::kNeoxParallel ? "neox" : "llama"; }

std::optional<Variant> parse_variant(std::string_view name) {
  if (name == "neox" || name == "neox_parallel") return Variant::kNeoxParallel;
  if (name == "llama" || name == "llama_sequential") return Variant::kLlamaSequential;
  return std::nullopt;
}

void TransformerConfig::validate() const {
  auto positive = [](std::int64_t v, const char* what) {
    if (v < 1) throw KindError(std::string(what) + " must be positive, got " + std::to_string(v));
  };
  positive(num_blocks, "num_blocks");
  positive(d_model, "d_model");
  positive(num_heads, "num_heads");
  positive(head_dim, "head_dim");
  positive(mlp_hidden, "mlp_hidden");
  if (vocab_size < 2) throw KindError("vocab_size must be at least 2, got " + std::to_string(vocab_size));
  if (d_model != num_heads * head_dim) {
    throw KindError("d_model (" + std::to_string(d_model) + ") must equal num_heads x head_dim (" +
                    std::to_string(num_heads) + " x " + std::to_string(head_dim) + ")");
  }
  if (head_dim % 2 != 0) throw KindError("head_dim must be even for RoPE, got " + std::to_string(head_dim));
  if (!(max_wavelength > 0.0f)) throw KindError("max_wavelength must be positive");
}

void register_kinds() {
  nn::register_kinds();
  static std::once_flag once;
  std::call_once(once, [] {
    auto& reg = KindRegistry::global();
    const std::vector<tree::SlotSpec> seq = {{"children", SlotType::kNodeList}};
    reg.add(KindInfo{"TransformerLM", "modelforge.models.TransformerLM", seq, "modelforge.nn.Sequential"});
    reg.add(KindInfo{"TransformerBlock", "modelforge.models.TransformerBlock", seq, "modelforge.nn.Sequential"});
    reg.add(KindInfo{"TransformerFeedForward", "modelforge.models.TransformerFeedForward", seq,
                     "modelforge.nn.Sequential"});
    reg.add(KindInfo{"LowRankAdapter", "modelforge.models.LowRankAdapter", {{"branches", SlotType::kNodeList}},
                     "modelforge.nn.BranchAndAddTogether"});
  });
}

namespace {

class Builder {
 public:
  explicit Builder(const TransformerConfig& c) : c_(c), init_(c.seed) {}

  Value model() {
    const bool llama = c_.variant == Variant::kLlamaSequential;
    std::vector<Value> blocks;
    for (std::int64_t b = 0; b < c_.num_blocks; ++b) {
      const std::string p = "block" + std::to_string(b);
      blocks.push_back(llama ? llama_block(p) : neox_block(p));
    }
    return nn::sequential_as("modelforge.models.TransformerLM",
                             {nn::embedding_lookup(param("embed/table", {{axes::kVocab, c_.vocab_size},
                                                                         {axes::kEmbedding, c_.d_model}},
                                                         {axes::kVocab}, {axes::kEmbedding}),
                                                   axes::kVocab),
                              nn::sequential(std::move(blocks)), norm("final_norm", llama),
                              nn::embedding_decode(param("decode/table", {{axes::kVocab, c_.vocab_size},
                                                                          {axes::kEmbedding, c_.d_model}},
                                                         {axes::kEmbedding}, {axes::kVocab}),
                                                   axes::kVocab)});
  }

 private:
  VariablePtr param(const std::string& label, const NamedShape& shape, const AxisNames& in, const AxisNames& out) {
    return tree::make_parameter(label, init_.glorot(label, shape, in, out));
  }

  Value dense(const std::string& label, const NamedShape& in, const NamedShape& out) {
    NamedShape shape = in;
    shape.insert(out.begin(), out.end());
    AxisNames in_names, out_names;
    for (const auto& [n, _] : in) in_names.push_back(n);
    for (const auto& [n, _] : out) out_names.push_back(n);
    return nn::linear(param(label + "/weights", shape, in_names, out_names), in_names, out_names);
  }

  Value bias(const std::string& label, const NamedShape& shape) {
    return nn::add_bias(tree::make_parameter(label + "/bias", NamedArray::zeros(shape)));
  }

  Value norm(const std::string& label, bool rms) {
    const NamedShape shape{{axes::kEmbedding, c_.d_model}};
    auto scale = tree::make_parameter(label + "/scale", NamedArray::full(shape, 1.0f));
    if (rms) return nn::rms_norm(scale, axes::kEmbedding);
    return nn::layer_norm(scale, tree::make_parameter(label + "/bias", NamedArray::zeros(shape)), axes::kEmbedding);
  }

  Value attention(const std::string& p, bool with_bias) {
    const NamedShape model{{axes::kEmbedding, c_.d_model}};
    const NamedShape heads{{axes::kHeads, c_.num_heads}, {axes::kProjection, c_.head_dim}};
    auto projection = [&](const std::string& name) {
      std::vector<Value> steps{dense(p + "." + name, model, heads)};
      if (with_bias) steps.push_back(bias(p + "." + name, heads));
      return steps;
    };
    std::vector<Value> q = projection("query");
    q.push_back(nn::apply_rope(axes::kProjection, kTokenPositions, c_.max_wavelength));
    q.push_back(nn::constant_rescale(1.0f / std::sqrt(static_cast<float>(c_.head_dim))));
    std::vector<Value> k = projection("key");
    k.push_back(nn::apply_rope(axes::kProjection, kTokenPositions, c_.max_wavelength));
    k.push_back(nn::rename_axes(axes::kSeq, axes::kKvSeq));
    std::vector<Value> v = projection("value");
    v.push_back(nn::rename_axes(axes::kSeq, axes::kKvSeq));
    std::vector<Value> out{nn::contract_with_side_input({axes::kKvSeq}, nn::kAttnAux),
                           dense(p + ".output", heads, model)};
    if (with_bias) out.push_back(bias(p + ".output", model));
    return nn::attention(nn::sequential(std::move(q)), nn::sequential(std::move(k)), nn::sequential(std::move(v)),
                         nn::sequential({nn::contract_with_side_input({axes::kProjection}, nn::kAttnAux),
                                         nn::causal_mask(kTokenPositions, kKvTokenPositions),
                                         nn::softmax({axes::kKvSeq})}),
                         nn::sequential(std::move(out)));
  }

  Value llama_block(const std::string& p) {
    const NamedShape model{{axes::kEmbedding, c_.d_model}};
    const NamedShape hidden{{axes::kNeurons, c_.mlp_hidden}};
    Value ffn = nn::sequential_as(
        "modelforge.models.TransformerFeedForward",
        {nn::branch_and_multiply({nn::sequential({dense(p + ".mlp.gate", model, hidden), nn::elementwise("silu")}),
                                  dense(p + ".mlp.value", model, hidden)}),
         dense(p + ".mlp.output", hidden, model)});
    return nn::sequential_as(
        "modelforge.models.TransformerBlock",
        {nn::residual(nn::sequential({norm(p + ".attention_norm", true), attention(p + ".attention", false)})),
         nn::residual(nn::sequential({norm(p + ".mlp_norm", true), std::move(ffn)}))});
  }

  Value neox_block(const std::string& p) {
    const NamedShape model{{axes::kEmbedding, c_.d_model}};
    const NamedShape hidden{{axes::kNeurons, c_.mlp_hidden}};
    Value ffn = nn::sequential_as("modelforge.models.TransformerFeedForward",
                                  {dense(p + ".mlp.input", model, hidden), bias(p + ".mlp.input", hidden),
                                   nn::elementwise("gelu_tanh"), dense(p + ".mlp.output", hidden, model),
                                   bias(p + ".mlp.output", model)});
    return nn::sequential_as(
        "modelforge.models.TransformerBlock",
        {nn::residual(nn::branch_and_add(
            {nn::sequential({norm(p + ".attention_norm", false), attention(p + ".attention", true)}),
             nn::sequential({norm(p + ".mlp_norm", false), std::move(ffn)})}))});
  }

  const TransformerConfig& c_;
  Initializer init_;
};

bool has_kind(const Value& root, std::string_view kind) {
  bool found = false;
  tree::visit(root, [&](const TreePath&, const Value& v) {
    if (found) return false;
    if (v.is_node() && v.as_node()->is(kind)) found = true;
    return !found;
  });
  return found;
}

std::vector<std::int32_t> argmax_rows(const NamedArray& logits) {
  // {batch, vocab}: vocab is the innermost axis in canonical order.
  const auto data = logits.float_data();
  const auto vocab = static_cast<std::size_t>(logits.axis_size(axes::kVocab));
  std::vector<std::int32_t> out;
  for (std::size_t row = 0; row * vocab < data.size(); ++row) {
    std::size_t best = 0;
    for (std::size_t v = 1; v < vocab; ++v) {
      if (data[row * vocab + v] > data[row * vocab + best]) best = v;
    }
    out.push_back(static_cast<std::int32_t>(best));
  }
  return out;
}

}  // namespace

Value build(const TransformerConfig& config) {
  config.validate();
  register_kinds();
  return relabel_by_path(Builder(config).model());
}

Value relabel_by_path(const Value& root) {
  std::map<std::string, std::string> renamed;
  tree::visit(root, [&](const TreePath& path, const Value& v) {
    if (v.is_variable() && !renamed.contains(v.as_variable()->label())) {
      const auto* slot = std::get_if<std::string>(&path.back());
      renamed[v.as_variable()->label()] = slot ? path.parent().to_string() + "/" + *slot : path.to_string();
    }
    return true;
  });
  return tree::map_variables(root, [&](const VariablePtr& v) {
    return std::make_shared<tree::Variable>(renamed.at(v->label()), v->kind(), v->value(), v->frozen());
  });
}

NamedArray token_array(const std::vector<std::vector<std::int32_t>>& rows) {
  if (rows.empty()) throw AxisError("token array needs at least one row");
  std::vector<std::int32_t> flat;
  for (const auto& row : rows) {
    if (row.size() != rows.front().size()) throw AxisError("token rows differ in length");
    flat.insert(flat.end(), row.begin(), row.end());
  }
  return NamedArray::ints({{axes::kBatch, static_cast<std::int64_t>(rows.size())},
                           {axes::kSeq, static_cast<std::int64_t>(rows.front().size())}},
                          {}, std::move(flat));
}

nn::SideInputs position_inputs(std::int64_t seq_len, std::int64_t offset) {
  std::vector<std::int32_t> pos(static_cast<std::size_t>(seq_len));
  for (std::int64_t i = 0; i < seq_len; ++i) pos[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(offset + i);
  return {{kTokenPositions, NamedArray::ints({{axes::kSeq, seq_len}}, {}, pos)},
          {kKvTokenPositions, NamedArray::ints({{axes::kKvSeq, seq_len}}, {}, pos)}};
}

NamedArray run(const Value& model, const NamedArray& tokens, nn::Trace* trace) {
  if (!tokens.has_axis(axes::kSeq)) throw AxisError("tokens lack a '" + std::string(axes::kSeq) + "' axis");
  return nn::forward(model, tokens, position_inputs(tokens.axis_size(axes::kSeq), kv_offset(model)), trace);
}

DecodeResult greedy_decode(const Value& model, const NamedArray& prompt, std::int64_t steps) {
  if (prompt.named_shape().size() != 2 || !prompt.has_axis(axes::kBatch) || !prompt.has_axis(axes::kSeq)) {
    throw AxisError("prompt must be {batch, seq}, got " + prompt.shape_string());
  }
  const bool cached = has_kind(model, "KVCachingAttention");
  const std::int64_t batch = prompt.axis_size(axes::kBatch);
  const std::int64_t len = prompt.axis_size(axes::kSeq);
  std::vector<std::vector<std::int32_t>> rows(static_cast<std::size_t>(batch));
  auto ids = prompt.int_data();
  for (std::int64_t b = 0; b < batch; ++b) {
    rows[static_cast<std::size_t>(b)].assign(ids.begin() + b * len, ids.begin() + (b + 1) * len);
  }
  DecodeResult result;
  result.tokens.resize(static_cast<std::size_t>(batch));
  NamedArray input = prompt;
  for (std::int64_t s = 0; s < steps; ++s) {
    const NamedArray logits = run(model, cached ? input : token_array(rows));
    const NamedArray last = nx::slice(logits, axes::kSeq, logits.axis_size(axes::kSeq) - 1);
    const auto next = argmax_rows(last);
    result.step_logits.push_back(last);
    std::vector<std::vector<std::int32_t>> step_rows;
    for (std::size_t b = 0; b < next.size(); ++b) {
      rows[b].push_back(next[b]);
      result.tokens[b].push_back(next[b]);
      step_rows.push_back({next[b]});
    }
    input = token_array(step_rows);
  }
  return result;
}

}  // namespace modelforge::models
