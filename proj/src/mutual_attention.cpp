#include "m3att/mutual_attention.hpp"

#include <cmath>

namespace m3att {

Tensor mutual_matrix(const Tensor& lang_key, const Tensor& vis_key) {
  if (lang_key.shape().back() != vis_key.shape().back())
    throw DimensionError("mutual_matrix: widths differ, " + shape_str(lang_key.shape()) +
                         " vs " + shape_str(vis_key.shape()));
  const double c = static_cast<double>(lang_key.shape().back());
  return scale(matmul(lang_key, transpose(vis_key)), 1.0 / std::sqrt(c));
}

Attended attend_lav(const Tensor& logits, const Tensor& vis_value) {
  const auto& sl = logits.shape();
  const auto& sv = vis_value.shape();
  if (sl.size() != sv.size() || sl.back() != sv[sv.size() - 2])
    throw DimensionError("attend_lav: logits " + shape_str(sl) + " do not match vision values " +
                         shape_str(sv));
  Tensor w = softmax_last_axis(logits);
  return {matmul(w, vis_value), w};
}

Attended attend_val(const Tensor& logits, const Tensor& lang_value, const Tensor& lang_mask) {
  const auto& sl = logits.shape();
  const auto& sv = lang_value.shape();
  if (sl.size() != sv.size() || sl[sl.size() - 2] != sv[sv.size() - 2])
    throw DimensionError("attend_val: logits " + shape_str(sl) +
                         " do not match language values " + shape_str(sv));
  Tensor w = softmax_last_axis(transpose(logits), lang_mask);
  return {matmul(w, lang_value), w};
}

std::pair<Tensor, Tensor> fuse(const Tensor& lav, const Tensor& val, const Linear& out_proj) {
  if (lav.shape().back() != val.shape().back())
    throw DimensionError("fuse: widths differ, " + shape_str(lav.shape()) + " vs " +
                         shape_str(val.shape()));
  const std::size_t hw = val.shape()[val.rank() - 2];
  if (hw != out_proj.in_features())
    throw ConfigError("fuse: " + std::to_string(hw) +
                      " vision positions but the output projection was configured for " +
                      std::to_string(out_proj.in_features()));
  Tensor fused = matmul(lav, transpose(val));
  return {fused, out_proj.forward(fused, false)};
}

MutualAttention::MutualAttention(std::size_t width, std::size_t spatial,
                                 AttentionSharing sharing, Rng& rng)
    : sharing_(sharing), width_(width) {
  lang_key_ = Linear(width, width, {}, rng);
  lang_value_ = Linear(width, width, {}, rng);
  vis_key_ = Linear(width, width, {}, rng);
  vis_value_ = Linear(width, width, {}, rng);
  if (sharing == AttentionSharing::kIndependent) {
    lang_key_val_ = Linear(width, width, {}, rng);
    vis_key_val_ = Linear(width, width, {}, rng);
  }
  out_proj_ = Linear(spatial, width, {}, rng);
}

MutualAttentionState MutualAttention::forward(const Tensor& query, const Tensor& encoded,
                                              const Tensor& lang_mask) const {
  if (query.shape().back() != width_ || encoded.shape().back() != width_)
    throw DimensionError("MutualAttention: expected width " + std::to_string(width_) + ", got " +
                         shape_str(query.shape()) + " and " + shape_str(encoded.shape()));
  if (encoded.shape()[encoded.rank() - 2] != spatial())
    throw ConfigError("MutualAttention: " + std::to_string(encoded.shape()[encoded.rank() - 2]) +
                      " vision positions, configured for " + std::to_string(spatial()));
  MutualAttentionState s;
  s.lang_key = lang_key_.forward(query, false);
  s.lang_value = lang_value_.forward(query, false);
  s.vis_key = vis_key_.forward(encoded, false);
  s.vis_value = vis_value_.forward(encoded, false);
  s.logits_lav = mutual_matrix(s.lang_key, s.vis_key);
  if (sharing_ == AttentionSharing::kShared) {
    s.logits_val = s.logits_lav;
  } else {
    s.logits_val =
        mutual_matrix(lang_key_val_.forward(query, false), vis_key_val_.forward(encoded, false));
  }
  auto lav = attend_lav(s.logits_lav, s.vis_value);
  auto val = attend_val(s.logits_val, s.lang_value, lang_mask);
  s.lav = lav.output;
  s.weights_lav = lav.weights;
  s.val = val.output;
  s.weights_val = val.weights;
  std::tie(s.fused, s.output) = fuse(s.lav, s.val, out_proj_);
  return s;
}

void MutualAttention::register_into(const std::string& prefix, ParamRegistry& reg) {
  lang_key_.register_into(join_name(prefix, "lang_key"), reg);
  lang_value_.register_into(join_name(prefix, "lang_value"), reg);
  vis_key_.register_into(join_name(prefix, "vis_key"), reg);
  vis_value_.register_into(join_name(prefix, "vis_value"), reg);
  if (sharing_ == AttentionSharing::kIndependent) {
    lang_key_val_.register_into(join_name(prefix, "lang_key_val"), reg);
    vis_key_val_.register_into(join_name(prefix, "vis_key_val"), reg);
  }
  out_proj_.register_into(join_name(prefix, "out_proj"), reg);
}

}  // namespace m3att
