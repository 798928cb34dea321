#include "m3att/mask_head.hpp"

namespace m3att {

Tensor dynamic_conv_maps(const Tensor& rows, const Tensor& encoded_map) {
  const bool batched = encoded_map.rank() == 4;
  if ((batched && rows.rank() != 3) || (!batched && (rows.rank() != 2 || encoded_map.rank() != 3)))
    throw DimensionError("dynamic_conv_maps: expected [B,N,C] with [B,C,H,W], got " +
                         shape_str(rows.shape()) + " and " + shape_str(encoded_map.shape()));
  const auto& s = encoded_map.shape();
  const std::size_t c = s[s.size() - 3];
  const std::size_t h = s[s.size() - 2];
  const std::size_t w = s[s.size() - 1];
  if (rows.shape().back() != c)
    throw DimensionError("dynamic_conv_maps: kernels of width " +
                         std::to_string(rows.shape().back()) + " over " + std::to_string(c) +
                         " channels");
  const std::size_t n = rows.shape()[rows.rank() - 2];
  if (batched) {
    const std::size_t b = s[0];
    Tensor flat = reshape(encoded_map, {b, c, h * w});
    return reshape(matmul(rows, flat), {b, n, h, w});
  }
  Tensor flat = reshape(encoded_map, {c, h * w});
  return reshape(matmul(rows, flat), {n, h, w});
}

MaskHead::MaskHead(std::size_t width, std::size_t tokens, std::size_t channels,
                   std::size_t heads, Rng& rng)
    : self_attn_(width, heads, rng), norm_(width) {
  if (channels < 2) throw ConfigError("MaskHead: needs at least 2 channels");
  const ConvOptions hidden{.activation = Activation::kRelu, .batch_norm = true};
  conv1_ = Conv2d(tokens, channels, 3, hidden, rng);
  conv2_ = Conv2d(channels, channels, 3, hidden, rng);
  conv3_ = Conv2d(channels, channels / 2, 3, hidden, rng);
  conv4_ = Conv2d(channels / 2, 1, 3, {}, rng);
  // Start near the foreground rate of a typical target instead of 0.5.
  for (double& v : conv4_.bias().mutable_data()) v = kMaskPriorLogit;
}

MaskHeadOutput MaskHead::forward(const Tensor& decoded, const Tensor& encoded_map,
                                 const Tensor& lang_mask, bool training) const {
  MaskHeadOutput out;
  out.kernels = norm_.forward(add(decoded, self_attn_.forward(decoded, decoded, decoded,
                                                              lang_mask).output));
  out.maps = dynamic_conv_maps(out.kernels, encoded_map);
  Tensor h = conv1_.forward(out.maps, training);
  h = conv2_.forward(upsample2x(h), training);
  h = conv3_.forward(upsample2x(h), training);
  out.mask = sigmoid(conv4_.forward(h, training));
  return out;
}

void MaskHead::register_into(const std::string& prefix, ParamRegistry& reg) {
  self_attn_.register_into(join_name(prefix, "self_attn"), reg);
  norm_.register_into(join_name(prefix, "norm"), reg);
  conv1_.register_into(join_name(prefix, "conv1"), reg);
  conv2_.register_into(join_name(prefix, "conv2"), reg);
  conv3_.register_into(join_name(prefix, "conv3"), reg);
  conv4_.register_into(join_name(prefix, "conv4"), reg);
}

}  // namespace m3att
