#pragma once

// Iterative multi-modal interaction: a language pathway running beside the
// decoder stack. Block n transforms the previous language feature, lets the
// decoder output attend over it, and injects the result back through a
// learnable scalar gate followed by batch normalization.

#include "m3att/nn.hpp"

#include <string_view>

namespace m3att {

enum class ImiMode { kFull, kStar, kOff };

std::string_view to_string(ImiMode mode);
ImiMode parse_imi_mode(std::string_view text);

struct ImiState {
  Tensor output;     // F_dec' [B, N, C]
  Tensor language;   // F_l^n [B, N, C]
  Tensor attention;  // A_l^n [B, N, N]; undefined unless mode is full
  Tensor injected;   // F_i^n (or F_t in star mode)
};

class ImiBlock {
 public:
  ImiBlock() = default;
  ImiBlock(std::size_t width, Rng& rng);

  ImiState forward(const Tensor& decoded, const Tensor& language_prev, const Tensor& words,
                   ImiMode mode, const Tensor& lang_mask, bool training) const;
  void register_into(const std::string& prefix, ParamRegistry& reg);

  Linear& language_transform() { return language_transform_; }
  Linear& attention_proj() { return attention_proj_; }
  Linear& value_proj() { return value_proj_; }
  Tensor& gate() { return gate_; }
  BatchNorm& norm() { return norm_; }

 private:
  Linear language_transform_;  // F_l^{n-1} -> F_l^n
  Linear attention_proj_;      // ReLU[F_dec W_a]
  Linear value_proj_;          // ReLU[F_l W_l']
  Tensor gate_;                // w_ci, shape [1], starts at 0
  mutable BatchNorm norm_;
};

class ImiChain {
 public:
  ImiChain() = default;
  // One block per gap between consecutive decoder layers.
  ImiChain(std::size_t width, std::size_t decoder_layers, ImiMode mode, Rng& rng);

  ImiMode mode() const { return mode_; }
  std::size_t size() const { return blocks_.size(); }
  const ImiBlock& block(std::size_t i) const { return blocks_.at(i); }
  ImiBlock& block(std::size_t i) { return blocks_.at(i); }
  void register_into(const std::string& prefix, ParamRegistry& reg);

 private:
  ImiMode mode_ = ImiMode::kOff;
  std::vector<ImiBlock> blocks_;
};

}  // namespace m3att
