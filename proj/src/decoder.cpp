#include "m3att/decoder.hpp"

namespace m3att {

std::string_view to_string(FusionKind kind) {
  switch (kind) {
    case FusionKind::kMutual: return "m3att";
    case FusionKind::kGenericLav: return "generic_lav";
    case FusionKind::kGenericVal: return "generic_val";
  }
  return "m3att";
}

FusionKind parse_fusion_kind(std::string_view text) {
  if (text == "m3att") return FusionKind::kMutual;
  if (text == "generic_lav") return FusionKind::kGenericLav;
  if (text == "generic_val") return FusionKind::kGenericVal;
  throw ConfigError("unknown baseline mode '" + std::string(text) + "'");
}

// ---- encoder -------------------------------------------------------------

EncoderLayer::EncoderLayer(std::size_t width, std::size_t heads, Rng& rng)
    : self_attn_(width, heads, rng),
      norm1_(width),
      norm2_(width),
      ffn_in_(width, 4 * width, {.activation = Activation::kRelu}, rng),
      ffn_out_(4 * width, width, {}, rng) {}

Tensor EncoderLayer::forward(const Tensor& x, bool training) const {
  Tensor h = norm1_.forward(add(x, self_attn_.forward(x, x, x).output));
  return norm2_.forward(add(h, ffn_out_.forward(ffn_in_.forward(h, training), training)));
}

void EncoderLayer::register_into(const std::string& prefix, ParamRegistry& reg) {
  self_attn_.register_into(join_name(prefix, "self_attn"), reg);
  norm1_.register_into(join_name(prefix, "norm1"), reg);
  norm2_.register_into(join_name(prefix, "norm2"), reg);
  ffn_in_.register_into(join_name(prefix, "ffn_in"), reg);
  ffn_out_.register_into(join_name(prefix, "ffn_out"), reg);
}

EncoderStack::EncoderStack(std::size_t width, std::size_t heads, std::size_t layers,
                           std::size_t height, std::size_t grid_width, Rng& rng)
    : positional_(sinusoidal_table_2d(height, grid_width, width)) {
  for (std::size_t i = 0; i < layers; ++i) layers_.emplace_back(width, heads, rng);
}

Tensor EncoderStack::forward(const Tensor& x, bool training) const {
  if (x.rank() != 3 || x.dim(1) != spatial() || x.dim(2) != positional_.dim(1))
    throw DimensionError("EncoderStack: input " + shape_str(x.shape()) + " does not match " +
                         std::to_string(spatial()) + " positions of width " +
                         std::to_string(positional_.dim(1)));
  Tensor h = add(x, positional_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    ScopeGuard scope("layer" + std::to_string(i));
    h = layers_[i].forward(h, training);
  }
  return h;
}

void EncoderStack::register_into(const std::string& prefix, ParamRegistry& reg) {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    layers_[i].register_into(join_name(prefix, "layer" + std::to_string(i)), reg);
}

// ---- decoder -------------------------------------------------------------

DecoderLayer::DecoderLayer(std::size_t width, std::size_t heads, std::size_t spatial,
                           FusionKind fusion, AttentionSharing sharing, NormPlacement norm,
                           Rng& rng)
    : fusion_(fusion),
      placement_(norm),
      self_attn_(width, heads, rng),
      cross_attn_(width, heads, rng),
      norm_self_(width),
      norm_fusion_(width),
      norm_cross_(width) {
  if (fusion == FusionKind::kMutual)
    mutual_ = MutualAttention(width, spatial, sharing, rng);
  else
    generic_attn_ = MultiHeadAttention(width, heads, rng);
}

DecoderLayerOutput DecoderLayer::forward(const Tensor& query, const Tensor& encoded,
                                         const Tensor& lang_mask) const {
  const bool pre = placement_ == NormPlacement::kPre;
  DecoderLayerOutput out;
  {
    ScopeGuard scope("self_attn");
    Tensor in = pre ? norm_self_.forward(query) : query;
    auto sa = self_attn_.forward(in, in, in, lang_mask);
    out.self_weights = sa.weights;
    Tensor sum = add(query, sa.output);
    out.query = pre ? sum : norm_self_.forward(sum);
  }
  const Tensor& fq = out.query;
  Tensor cross_mask = lang_mask;
  {
    ScopeGuard scope("fusion");
    Tensor in = pre ? norm_fusion_.forward(fq) : fq;
    Tensor residual = fq;
    Tensor slot;
    switch (fusion_) {
      case FusionKind::kMutual: {
        out.mutual = mutual_.forward(in, encoded, lang_mask);
        slot = out.mutual->output;
        break;
      }
      case FusionKind::kGenericLav: {
        auto r = generic_attn_.forward(in, encoded, encoded);
        out.generic_weights = r.weights;
        slot = r.output;
        break;
      }
      case FusionKind::kGenericVal: {
        auto r = generic_attn_.forward(encoded, in, in, lang_mask);
        out.generic_weights = r.weights;
        slot = r.output;
        residual = encoded;
        cross_mask = Tensor{};
        break;
      }
    }
    Tensor sum = add(residual, slot);
    out.fused = pre ? sum : norm_fusion_.forward(sum);
  }
  {
    ScopeGuard scope("cross_attn");
    Tensor in = pre ? norm_cross_.forward(fq) : fq;
    auto ca = cross_attn_.forward(in, out.fused, out.fused, cross_mask);
    out.cross_weights = ca.weights;
    Tensor sum = add(fq, ca.output);
    out.output = pre ? sum : norm_cross_.forward(sum);
  }
  return out;
}

void DecoderLayer::register_into(const std::string& prefix, ParamRegistry& reg) {
  self_attn_.register_into(join_name(prefix, "self_attn"), reg);
  if (fusion_ == FusionKind::kMutual)
    mutual_.register_into(join_name(prefix, "m3att"), reg);
  else
    generic_attn_.register_into(join_name(prefix, "generic_attn"), reg);
  cross_attn_.register_into(join_name(prefix, "cross_attn"), reg);
  norm_self_.register_into(join_name(prefix, "norm_self"), reg);
  norm_fusion_.register_into(join_name(prefix, "norm_fusion"), reg);
  norm_cross_.register_into(join_name(prefix, "norm_cross"), reg);
}

DecoderStack::DecoderStack(std::size_t width, std::size_t heads, std::size_t spatial,
                           std::size_t layers, FusionKind fusion, AttentionSharing sharing,
                           NormPlacement norm, Rng& rng) {
  if (layers == 0) throw ConfigError("DecoderStack: needs at least one layer");
  for (std::size_t i = 0; i < layers; ++i)
    layers_.emplace_back(width, heads, spatial, fusion, sharing, norm, rng);
}

DecoderStackOutput DecoderStack::forward(const Tensor& words, const Tensor& encoded,
                                         const Tensor& lang_mask, const ImiChain* imi,
                                         bool training) const {
  if (imi && imi->size() + 1 < layers_.size())
    throw ConfigError("DecoderStack: IMI chain has " + std::to_string(imi->size()) +
                      " blocks for " + std::to_string(layers_.size()) + " layers");
  DecoderStackOutput out;
  Tensor query = words;
  Tensor language = words;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    {
      ScopeGuard scope("layer" + std::to_string(i));
      out.layers.push_back(layers_[i].forward(query, encoded, lang_mask));
    }
    query = out.layers.back().output;
    if (imi && i + 1 < layers_.size()) {
      ScopeGuard scope("imi" + std::to_string(i));
      out.imi.push_back(
          imi->block(i).forward(query, language, words, imi->mode(), lang_mask, training));
      query = out.imi.back().output;
      language = out.imi.back().language;
    }
  }
  out.output = query;
  return out;
}

void DecoderStack::register_into(const std::string& prefix, ParamRegistry& reg) {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    layers_[i].register_into(join_name(prefix, "layer" + std::to_string(i)), reg);
}

}  // namespace m3att
