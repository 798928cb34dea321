#pragma once

// Transformer encoder over flattened vision features and the mutual decoder
// stack. A decoder layer runs self-attention on its query, fuses the query
// with the encoded vision features, and queries the fused feature again with
// cross-attention.

#include "m3att/imi.hpp"
#include "m3att/mutual_attention.hpp"
#include "m3att/nn.hpp"

#include <optional>
#include <string_view>

namespace m3att {

// What sits in the fusion slot of a decoder layer.
enum class FusionKind {
  kMutual,      // mutual attention
  kGenericLav,  // language queries vision (standard cross-attention)
  kGenericVal,  // vision queries language
};

std::string_view to_string(FusionKind kind);
FusionKind parse_fusion_kind(std::string_view text);

enum class NormPlacement { kPost, kPre };

class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(std::size_t width, std::size_t heads, Rng& rng);
  Tensor forward(const Tensor& x, bool training) const;
  void register_into(const std::string& prefix, ParamRegistry& reg);

 private:
  MultiHeadAttention self_attn_;
  LayerNorm norm1_, norm2_;
  Linear ffn_in_, ffn_out_;
};

class EncoderStack {
 public:
  EncoderStack() = default;
  EncoderStack(std::size_t width, std::size_t heads, std::size_t layers, std::size_t height,
               std::size_t grid_width, Rng& rng);

  // x: [B, HW, C]
  Tensor forward(const Tensor& x, bool training) const;
  void register_into(const std::string& prefix, ParamRegistry& reg);

  std::size_t layers() const { return layers_.size(); }
  std::size_t spatial() const { return positional_.dim(0); }
  const Tensor& positional() const { return positional_; }

 private:
  std::vector<EncoderLayer> layers_;
  Tensor positional_;  // [HW x C], constant
};

struct DecoderLayerOutput {
  Tensor output;          // [B, N, C]
  Tensor query;           // F_q after self-attention
  Tensor fused;           // output of the fusion slot after residual/norm
  Tensor self_weights;    // [B, heads, N, N]
  Tensor cross_weights;   // [B, heads, N, keys]
  Tensor generic_weights; // fusion-slot attention weights for generic kinds
  std::optional<MutualAttentionState> mutual;
};

class DecoderLayer {
 public:
  DecoderLayer() = default;
  DecoderLayer(std::size_t width, std::size_t heads, std::size_t spatial, FusionKind fusion,
               AttentionSharing sharing, NormPlacement norm, Rng& rng);

  // query: [B, N, C]; encoded: [B, HW, C]; lang_mask: additive [B, N] or undefined.
  DecoderLayerOutput forward(const Tensor& query, const Tensor& encoded,
                             const Tensor& lang_mask) const;
  void register_into(const std::string& prefix, ParamRegistry& reg);

  FusionKind fusion() const { return fusion_; }
  MultiHeadAttention& self_attn() { return self_attn_; }
  MultiHeadAttention& cross_attn() { return cross_attn_; }
  MultiHeadAttention& generic_attn() { return generic_attn_; }
  MutualAttention& mutual() { return mutual_; }
  LayerNorm& norm_self() { return norm_self_; }
  LayerNorm& norm_fusion() { return norm_fusion_; }
  LayerNorm& norm_cross() { return norm_cross_; }

 private:
  FusionKind fusion_ = FusionKind::kMutual;
  NormPlacement placement_ = NormPlacement::kPost;
  MultiHeadAttention self_attn_;
  MutualAttention mutual_;
  MultiHeadAttention generic_attn_;
  MultiHeadAttention cross_attn_;
  LayerNorm norm_self_, norm_fusion_, norm_cross_;
};

struct DecoderStackOutput {
  Tensor output;  // F_dec [B, N, C]
  std::vector<DecoderLayerOutput> layers;
  std::vector<ImiState> imi;
};

class DecoderStack {
 public:
  DecoderStack() = default;
  DecoderStack(std::size_t width, std::size_t heads, std::size_t spatial, std::size_t layers,
               FusionKind fusion, AttentionSharing sharing, NormPlacement norm, Rng& rng);

  // Layer 1 consumes words; later layers consume the previous output, passed
  // through the matching IMI block when imi is given.
  DecoderStackOutput forward(const Tensor& words, const Tensor& encoded, const Tensor& lang_mask,
                             const ImiChain* imi, bool training) const;
  void register_into(const std::string& prefix, ParamRegistry& reg);

  std::size_t size() const { return layers_.size(); }
  DecoderLayer& layer(std::size_t i) { return layers_.at(i); }

 private:
  std::vector<DecoderLayer> layers_;
};

}  // namespace m3att
