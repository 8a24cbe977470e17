#pragma once

// Toy decoder-only Transformer built from layer nodes, and model surgery
// written as selector rewrites: KV caching, LoRA, activation patching and
// linearization. Plus a tiny SGD trainer with forward-mode gradients.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "modelforge/named_array.hpp"
#include "modelforge/nn.hpp"
#include "modelforge/tree.hpp"

namespace modelforge::models {

using tree::Value;

enum class Variant { kNeoxParallel, kLlamaSequential };

std::string_view variant_name(Variant v);  // "neox" / "llama"
std::optional<Variant> parse_variant(std::string_view name);

struct TransformerConfig {
  Variant variant = Variant::kLlamaSequential;
  std::int64_t num_blocks = 2;
  std::int64_t d_model = 16;
  std::int64_t num_heads = 2;
  std::int64_t head_dim = 8;
  std::int64_t mlp_hidden = 32;
  std::int64_t vocab_size = 11;
  float max_wavelength = 10000.0f;
  std::uint64_t seed = 0;

  // Throws KindError describing the first violated relation.
  void validate() const;
};

// Axis names used throughout the models.
namespace axes {
inline constexpr const char* kBatch = "batch";
inline constexpr const char* kSeq = "seq";
inline constexpr const char* kKvSeq = "kv_seq";
inline constexpr const char* kEmbedding = "embedding";
inline constexpr const char* kHeads = "heads";
inline constexpr const char* kProjection = "projection";
inline constexpr const char* kNeurons = "neurons";
inline constexpr const char* kVocab = "vocab";
inline constexpr const char* kLoraRank = "lora_rank";
}  // namespace axes

inline constexpr const char* kTokenPositions = "token_positions";
inline constexpr const char* kKvTokenPositions = "kv_token_positions";

// TransformerLM, TransformerBlock, TransformerFeedForward, LowRankAdapter.
void register_kinds();

Value build(const TransformerConfig& config);

// Labels every variable "<owner path>/<slot>" after the first place it occurs.
Value relabel_by_path(const Value& root);

// {batch: rows, seq: cols}; rows must have equal length.
NamedArray token_array(const std::vector<std::vector<std::int32_t>>& rows);

// token_positions {seq} and kv_token_positions {kv_seq}, both offset + 0..T-1.
nn::SideInputs position_inputs(std::int64_t seq_len, std::int64_t offset = 0);

// Forward pass with positions supplied; the offset comes from the model's KV
// position counter when it has one.
NamedArray run(const Value& model, const NamedArray& tokens, nn::Trace* trace = nullptr);

// Greedy decoding of `steps` new tokens after `prompt` ({batch, seq}). Logits
// per step are {batch, vocab}. Works with or without KV caches; without, the
// whole prefix is recomputed each step.
struct DecodeResult {
  std::vector<NamedArray> step_logits;
  std::vector<std::vector<std::int32_t>> tokens;  // per batch row, new tokens only
};
DecodeResult greedy_decode(const Value& model, const NamedArray& prompt, std::int64_t steps);

// ---- surgery ---------------------------------------------------------------

// Replaces every Attention with KVCachingAttention sharing one position
// counter; `batch_axes` fixes the non-sequence axes of the caches.
Value enable_kv_caching(const Value& model, std::int64_t cache_len, const NamedShape& batch_axes);
// Zeroes caches and counter in place.
void reset_kv_caches(const Value& model);
// Offset of the shared position counter, or 0 when the model has none.
std::int64_t kv_offset(const Value& model);

// LowRankAdapter([Linear with frozen weights, Sequential([A, B, ConstantRescale(alpha/rank)])]).
// `path` is where the adapter will live; it prefixes the new variable labels.
Value loraify(const Value& linear, std::int64_t rank, float alpha, std::uint64_t seed, const tree::TreePath& path);
// loraify applied to every Linear in `model`.
Value loraify_all(const Value& model, std::int64_t rank, float alpha, std::uint64_t seed);
// rank * (fan_in + fan_out) for one Linear.
std::int64_t adapter_parameter_count(const Value& linear, std::int64_t rank);

// Inserts RewireComputationPaths after every instance of `after_kind`.
Value patch_activations(const Value& model, std::string_view after_kind, const std::string& worlds_axis,
                        std::int64_t source_index, const std::vector<std::int64_t>& destination_indices);
// Wraps every instance of `target_kind` in LinearizeAndAdjust.
Value linearize(const Value& model, std::string_view target_kind, const std::string& worlds_axis,
                std::int64_t reference_index);

// Logit differences for copying one head's attention output from world
// `source` into the others, at each attention site. Result is
// {site, head, worlds}: target-token logit at the last position, patched minus
// unpatched. Tokens must carry `worlds_axis`.
NamedArray head_patching_sweep(const Value& model, const NamedArray& tokens, const std::string& worlds_axis,
                               std::int64_t source, const std::vector<std::int32_t>& target_tokens);

// ---- training --------------------------------------------------------------

// Mean next-token cross-entropy of logits {batch, seq, vocab} against tokens.
float next_token_loss(const NamedArray& logits, const NamedArray& tokens);

// d loss / d value for every trainable (unfrozen Parameter) variable,
// computed by forward-mode JVP with one pass per variable.
nn::ParamTangents loss_gradients(const Value& model, const NamedArray& tokens);

struct TrainResult {
  Value model;
  std::vector<float> losses;  // loss before each step, then the final loss
};

// Plain SGD on a mutable copy of `model`; frozen variables stay shared.
TrainResult train_toy(const Value& model, const NamedArray& tokens, std::int64_t steps, float lr);

}  // namespace modelforge::models
