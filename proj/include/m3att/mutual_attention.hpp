#pragma once

// Mutual attention between language and vision: one cross-modal logits matrix
// normalized along both axes, producing a language-attended vision feature
// (one row per word) and a vision-attended language feature (one row per
// pixel), fused by using the former as dynamic kernels over the latter.
//
// Tensors are batched: language [B, N, C], vision [B, HW, C]. Rank-2 inputs
// are accepted by the free functions for single instances.

#include "m3att/nn.hpp"

namespace m3att {

enum class AttentionSharing { kShared, kIndependent };

struct MutualAttentionState {
  Tensor lang_key, lang_value;  // [B, N, C]
  Tensor vis_key, vis_value;    // [B, HW, C]
  // Logits feeding each softmax. In shared mode both handles refer to the
  // same tensor.
  Tensor logits_lav;   // [B, N, HW]
  Tensor logits_val;   // [B, N, HW]
  Tensor weights_lav;  // softmax over HW: [B, N, HW]
  Tensor weights_val;  // softmax over N of the transpose: [B, HW, N]
  Tensor lav;          // [B, N, C]
  Tensor val;          // [B, HW, C]
  Tensor fused;        // [B, N, HW]
  Tensor output;       // [B, N, C]
};

// A_mut = (1/sqrt(C)) * lang_key * vis_key^T
Tensor mutual_matrix(const Tensor& lang_key, const Tensor& vis_key);

struct Attended {
  Tensor output;
  Tensor weights;
};

// softmax over the vision axis, applied to vision values.
Attended attend_lav(const Tensor& logits, const Tensor& vis_value);
// softmax over the language axis of the transposed logits, applied to
// language values. lang_mask is an additive [B, N] mask or undefined.
Attended attend_val(const Tensor& logits, const Tensor& lang_value,
                    const Tensor& lang_mask = Tensor{});

// F_mul = lav * val^T, then projected HW -> C by out_proj.
std::pair<Tensor, Tensor> fuse(const Tensor& lav, const Tensor& val, const Linear& out_proj);

class MutualAttention {
 public:
  MutualAttention() = default;
  MutualAttention(std::size_t width, std::size_t spatial, AttentionSharing sharing, Rng& rng);

  // query: [B, N, C] (language side), encoded: [B, HW, C] (vision side).
  MutualAttentionState forward(const Tensor& query, const Tensor& encoded,
                               const Tensor& lang_mask = Tensor{}) const;
  void register_into(const std::string& prefix, ParamRegistry& reg);

  AttentionSharing sharing() const { return sharing_; }
  std::size_t spatial() const { return out_proj_.in_features(); }

  Linear& lang_key() { return lang_key_; }
  Linear& lang_value() { return lang_value_; }
  Linear& vis_key() { return vis_key_; }
  Linear& vis_value() { return vis_value_; }
  // Second key pair, present in independent mode only.
  Linear& lang_key_val() { return lang_key_val_; }
  Linear& vis_key_val() { return vis_key_val_; }
  Linear& out_proj() { return out_proj_; }

 private:
  AttentionSharing sharing_ = AttentionSharing::kShared;
  std::size_t width_ = 0;
  Linear lang_key_, lang_value_, vis_key_, vis_value_;
  Linear lang_key_val_, vis_key_val_;
  Linear out_proj_;  // [HW x C]
};

}  // namespace m3att
