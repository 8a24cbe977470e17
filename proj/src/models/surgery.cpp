#include <functional>

#include "modelforge/error.hpp"
#include "modelforge/selection.hpp"
#include "modelforge/transformer.hpp"
#include "nn/internal.hpp"

namespace modelforge::models {

using tree::Node;
using tree::TreePath;
using tree::VariablePtr;

namespace {

// Rewrites each selected subtree with access to its path.
Value rewrite_at(const tree::Selection& sel, const std::function<Value(const TreePath&, const Value&)>& fn) {
  Value root = sel.root();
  for (const auto& path : sel.paths()) {
    const Value old = tree::resolve(root, path);
    try {
      root = tree::replace_at(root, path, fn(path, old));
    } catch (const PathError&) {
      throw;
    } catch (const Error& e) {
      throw PathError(e.what(), path.to_string());
    }
  }
  return root;
}

const Node* first_linear(const Value& subtree) {
  const Node* found = nullptr;
  tree::visit(subtree, [&](const TreePath&, const Value& v) {
    if (found) return false;
    if (v.is_node() && v.as_node()->is("Linear")) found = v.as_node().get();
    return found == nullptr;
  });
  return found;
}

// Sizes of a Linear's output axes, read off its weights.
NamedShape output_shape(const Node& linear) {
  NamedShape out;
  const NamedArray& w = linear.field("weights").as_variable()->value();
  for (const auto& item : linear.field("output_axes").as_list()) {
    out.emplace(item.as_string(), w.axis_size(item.as_string()));
  }
  return out;
}

std::int64_t product_of(const NamedArray& w, const Value& names) {
  std::int64_t n = 1;
  for (const auto& item : names.as_list()) n *= w.axis_size(item.as_string());
  return n;
}

std::vector<const Node*> cached_attention_nodes(const Value& model) {
  std::vector<const Node*> out;
  tree::visit(model, [&](const TreePath&, const Value& v) {
    if (v.is_node() && v.as_node()->is("KVCachingAttention")) out.push_back(v.as_node().get());
    return true;
  });
  return out;
}

}  // namespace

Value enable_kv_caching(const Value& model, std::int64_t cache_len, const NamedShape& batch_axes) {
  register_kinds();
  if (cache_len < 1) throw KindError("cache length must be positive, got " + std::to_string(cache_len));
  if (!model.is_node() || !tree::KindRegistry::global().is_subkind(model.as_node()->kind(), "modelforge.nn.Sequential")) {
    throw KindError("KV caching needs a Sequential-kind model root");
  }
  const auto sel = tree::select(model).at_instances_of("Attention");
  if (sel.count() == 0) throw KindError("model has no Attention layers to cache");

  VariablePtr counter =
      tree::make_state(sel.paths().front().to_string() + "/position_counter", NamedArray::scalar_int(0));
  Value cached = rewrite_at(sel, [&](const TreePath& path, const Value& v) {
    const Node& attn = *v.as_node();
    auto cache_for = [&](const char* slot) {
      const Node* lin = first_linear(attn.field(slot));
      if (lin == nullptr) throw KindError(std::string("no Linear found under ") + slot);
      NamedShape shape = batch_axes;
      for (const auto& [name, size] : output_shape(*lin)) shape.emplace(name, size);
      shape.emplace(axes::kKvSeq, cache_len);
      return NamedArray::zeros(shape);
    };
    const std::string prefix = path.to_string();
    return Value(Node::make(
        "modelforge.nn.KVCachingAttention",
        {{"input_to_query", attn.field("input_to_query")},
         {"input_to_key", attn.field("input_to_key")},
         {"input_to_value", attn.field("input_to_value")},
         {"query_key_to_attn", attn.field("query_key_to_attn")},
         {"attn_value_to_output", attn.field("attn_value_to_output")},
         {"key_cache", tree::make_state(prefix + "/key_cache", cache_for("input_to_key"))},
         {"value_cache", tree::make_state(prefix + "/value_cache", cache_for("input_to_value"))},
         {"position_counter", counter},
         {"cache_len", cache_len},
         {"kv_axis", axes::kKvSeq},
         {"kv_positions_side_input", kKvTokenPositions}}));
  });

  // One counter advance per forward pass, after every attention has read it.
  const Node& root = *cached.as_node();
  Value::List children = root.field("children").as_list();
  children.push_back(nn::advance_position_counter(counter, axes::kSeq));
  return Value(root.with_field("children", std::move(children)));
}

void reset_kv_caches(const Value& model) {
  for (const Node* node : cached_attention_nodes(model)) {
    for (const char* slot : {"key_cache", "value_cache"}) {
      const auto& var = node->field(slot).as_variable();
      var->set_value(nx::zeros_like(var->value()));
    }
    node->field("position_counter").as_variable()->set_value(NamedArray::scalar_int(0));
  }
}

std::int64_t kv_offset(const Value& model) {
  const auto nodes = cached_attention_nodes(model);
  if (nodes.empty()) return 0;
  return nodes.front()->field("position_counter").as_variable()->value().int_data()[0];
}

Value loraify(const Value& linear, std::int64_t rank, float alpha, std::uint64_t seed, const TreePath& path) {
  register_kinds();
  if (!linear.is_node() || !linear.as_node()->is("Linear")) {
    throw KindError("loraify expects a Linear, got " + (linear.is_node() ? linear.as_node()->kind_name() : linear.type_name()));
  }
  const Node& lin = *linear.as_node();
  const VariablePtr& weights = lin.field("weights").as_variable();
  const NamedArray& w = weights->value();
  const std::int64_t fan_in = product_of(w, lin.field("input_axes"));
  const std::int64_t fan_out = product_of(w, lin.field("output_axes"));
  if (rank < 1 || rank >= std::min(fan_in, fan_out)) {
    throw KindError("LoRA rank " + std::to_string(rank) + " must be in [1, " +
                    std::to_string(std::min(fan_in, fan_out)) + ")");
  }
  if (w.has_axis(axes::kLoraRank)) throw AxisError("Linear already uses axis '" + std::string(axes::kLoraRank) + "'");

  NamedShape a_shape, b_shape{{axes::kLoraRank, rank}};
  AxisNames in_names = nn::detail::strings_of(lin.field("input_axes"));
  AxisNames out_names = nn::detail::strings_of(lin.field("output_axes"));
  for (const auto& n : in_names) a_shape.emplace(n, w.axis_size(n));
  a_shape.emplace(axes::kLoraRank, rank);
  for (const auto& n : out_names) b_shape.emplace(n, w.axis_size(n));

  const TreePath adapter = path.child("branches").child(std::int64_t{1}).child("children");
  const std::string a_label = adapter.child(std::int64_t{0}).to_string() + "/weights";
  const std::string b_label = adapter.child(std::int64_t{1}).to_string() + "/weights";
  nn::Initializer init(seed);
  auto a = tree::make_parameter(a_label, init.glorot(a_label, a_shape, in_names, {axes::kLoraRank}));
  auto b = tree::make_parameter(b_label, NamedArray::zeros(b_shape));
  auto frozen = std::make_shared<tree::Variable>(weights->label(), weights->kind(), w, true);

  Value base = Value(lin.with_field("weights", frozen));
  Value low_rank = nn::sequential({nn::linear(a, in_names, {axes::kLoraRank}), nn::linear(b, {axes::kLoraRank}, out_names),
                                   nn::constant_rescale(alpha / static_cast<float>(rank))});
  return Value(Node::make("modelforge.models.LowRankAdapter", {{"branches", Value::List{base, low_rank}}}));
}

Value loraify_all(const Value& model, std::int64_t rank, float alpha, std::uint64_t seed) {
  const auto sel = tree::select(model).at_instances_of("Linear");
  return rewrite_at(sel, [&](const TreePath& path, const Value& v) { return loraify(v, rank, alpha, seed, path); });
}

std::int64_t adapter_parameter_count(const Value& linear, std::int64_t rank) {
  const Node& lin = *linear.as_node();
  const NamedArray& w = lin.field("weights").as_variable()->value();
  return rank * (product_of(w, lin.field("input_axes")) + product_of(w, lin.field("output_axes")));
}

Value patch_activations(const Value& model, std::string_view after_kind, const std::string& worlds_axis,
                        std::int64_t source_index, const std::vector<std::int64_t>& destination_indices) {
  const auto sel = tree::select(model).at_instances_of(after_kind);
  if (sel.count() == 0) throw KindError("no instances of '" + std::string(after_kind) + "' to patch after");
  return sel.insert_after(nn::rewire(worlds_axis, source_index, destination_indices));
}

Value linearize(const Value& model, std::string_view target_kind, const std::string& worlds_axis,
                std::int64_t reference_index) {
  const auto sel = tree::select(model).at_instances_of(target_kind);
  if (sel.count() == 0) throw KindError("no instances of '" + std::string(target_kind) + "' to linearize");
  return sel.apply([&](const Value& v) { return nn::linearize_and_adjust(v, worlds_axis, reference_index); });
}

NamedArray head_patching_sweep(const Value& model, const NamedArray& tokens, const std::string& worlds_axis,
                               std::int64_t source, const std::vector<std::int32_t>& target_tokens) {
  if (!tokens.has_axis(worlds_axis) || !tokens.has_axis(axes::kSeq) || tokens.named_shape().size() != 2) {
    throw AxisError("sweep tokens must be {" + worlds_axis + ", seq}, got " + tokens.shape_string());
  }
  const std::int64_t worlds = tokens.axis_size(worlds_axis);
  if (static_cast<std::int64_t>(target_tokens.size()) != worlds) {
    throw AxisError("need one target token per world");
  }
  std::vector<std::int64_t> others;
  for (std::int64_t w = 0; w < worlds; ++w) {
    if (w != source) others.push_back(w);
  }

  auto target_logits = [&](const Value& m) {
    const NamedArray logits = run(m, tokens);
    const NamedArray last = nx::slice(logits, axes::kSeq, logits.axis_size(axes::kSeq) - 1);
    std::vector<float> out;
    for (std::int64_t w = 0; w < worlds; ++w) {
      out.push_back(last.value_at({{worlds_axis, w}, {axes::kVocab, target_tokens[static_cast<std::size_t>(w)]}}));
    }
    return out;
  };
  const std::vector<float> baseline = target_logits(model);

  const auto sites = tree::select(model).at_instances_of("Attention");
  const Node* out_linear = sites.count() ? first_linear(sites.get_all().front().as_node()->field("attn_value_to_output"))
                                         : nullptr;
  if (out_linear == nullptr) throw KindError("model has no Attention output projection to patch");
  const std::int64_t heads = out_linear->field("weights").as_variable()->value().axis_size(axes::kHeads);
  const TreePath after_contraction({std::string("attn_value_to_output"), std::string("children"), std::int64_t{0}});

  std::vector<float> data;
  for (std::size_t s = 0; s < sites.count(); ++s) {
    const tree::Selection site(model, {sites.paths()[s]});
    for (std::int64_t h = 0; h < heads; ++h) {
      std::vector<float> keep(static_cast<std::size_t>(heads), 0.0f), rest(static_cast<std::size_t>(heads), 1.0f);
      keep[static_cast<std::size_t>(h)] = 1.0f;
      rest[static_cast<std::size_t>(h)] = 0.0f;
      const Value patch = nn::branch_and_add(
          {nn::sequential({nn::rewire(worlds_axis, source, others),
                           nn::constant_multiply(NamedArray::floats({{axes::kHeads, heads}}, {}, keep))}),
           nn::constant_multiply(NamedArray::floats({{axes::kHeads, heads}}, {}, rest))});
      const std::vector<float> patched = target_logits(site.at(after_contraction).insert_after(patch));
      for (std::int64_t w = 0; w < worlds; ++w) {
        data.push_back(patched[static_cast<std::size_t>(w)] - baseline[static_cast<std::size_t>(w)]);
      }
    }
  }
  const Shape shape{static_cast<std::int64_t>(sites.count()), heads, worlds};
  return NamedArray::floats({}, shape, std::move(data)).tag({"site", "head", worlds_axis});
}

}  // namespace modelforge::models
