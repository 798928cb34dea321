#pragma once

#include "m3att/nn.hpp"

namespace m3att {

// Each row of the decoder feature acts as a 1x1 convolution kernel over the
// encoder map: map_i[h][w] = sum_c rows[i][c] * enc[c][h][w].
// rows: [B, N, C] or [N, C]; encoded_map: [B, C, H, W] or [C, H, W].
Tensor dynamic_conv_maps(const Tensor& rows, const Tensor& encoded_map);

struct MaskHeadOutput {
  Tensor mask;      // probabilities [B, 1, 4H, 4W]
  Tensor kernels;   // decoder rows after self-attention [B, N, C]
  Tensor maps;      // dynamic maps [B, N, H, W]
};

// Initial output logit, roughly the foreground rate of a synthetic target.
inline constexpr double kMaskPriorLogit = -2.5;

// Self-attention over the decoder output, dynamic 1x1 maps over the encoder
// map, then conv(N->D) up conv(D->D) up conv(D->D/2) conv(D/2->1) + sigmoid.
class MaskHead {
 public:
  MaskHead() = default;
  MaskHead(std::size_t width, std::size_t tokens, std::size_t channels, std::size_t heads,
           Rng& rng);

  MaskHeadOutput forward(const Tensor& decoded, const Tensor& encoded_map,
                         const Tensor& lang_mask, bool training) const;
  void register_into(const std::string& prefix, ParamRegistry& reg);

  MultiHeadAttention& self_attn() { return self_attn_; }

 private:
  MultiHeadAttention self_attn_;
  LayerNorm norm_;
  Conv2d conv1_, conv2_, conv3_, conv4_;
};

}  // namespace m3att
