#pragma once

// Language feature reconstruction: a pooled target projected from the input
// language features, a pooled reconstruction from the final decoder output,
// and the mean squared error between them. Only the training loss reads it.

#include "m3att/nn.hpp"

namespace m3att {

struct LfrOptions {
  bool batch_norm = true;
  // ReLU on the last trunk layer as well, so the reconstruction is
  // nonnegative like the target.
  bool strict_relu = false;
};

class LfrHead {
 public:
  LfrHead() = default;
  LfrHead(std::size_t width, std::size_t max_len, LfrOptions options, Rng& rng);

  // mean over the N+1 rows of ReLU([(F_t + e) ; F_t'] W_proj).
  // words: [B, N, C] or [N, C]; sentence: [B, 1, C] or [1, C].
  Tensor project_target(const Tensor& words, const Tensor& sentence) const;
  // Three stacked linear layers over rows of F_dec, then mean over the sequence.
  Tensor reconstruct(const Tensor& decoded, bool training) const;
  void register_into(const std::string& prefix, ParamRegistry& reg);

  Tensor& projection() { return projection_; }
  Tensor& positional() { return positional_; }
  Linear& trunk(std::size_t i) { return trunk_.at(i); }

 private:
  Tensor projection_;  // W_proj [C x C]
  Tensor positional_;  // [max_len x C], constant
  std::vector<Linear> trunk_;
};

Tensor lfr_loss(const Tensor& reconstructed, const Tensor& target);

}  // namespace m3att
