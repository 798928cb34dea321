#include "m3att/lfr.hpp"

#include <cmath>

namespace m3att {

LfrHead::LfrHead(std::size_t width, std::size_t max_len, LfrOptions options, Rng& rng)
    : positional_(sinusoidal_table(max_len, width)) {
  const double limit = std::sqrt(3.0 / static_cast<double>(width));
  std::vector<double> w(width * width);
  for (auto& v : w) v = rng.uniform(-limit, limit);
  projection_ = Tensor::from({width, width}, std::move(w), true);
  const LinearOptions hidden{.activation = Activation::kRelu, .batch_norm = options.batch_norm};
  const LinearOptions last{
      .activation = options.strict_relu ? Activation::kRelu : Activation::kNone,
      .batch_norm = options.batch_norm};
  trunk_.emplace_back(width, width, hidden, rng);
  trunk_.emplace_back(width, width, hidden, rng);
  trunk_.emplace_back(width, width, last, rng);
}

Tensor LfrHead::project_target(const Tensor& words, const Tensor& sentence) const {
  const std::size_t seq_axis = words.rank() - 2;
  const std::size_t n = words.dim(seq_axis);
  if (sentence.rank() != words.rank() || sentence.dim(seq_axis) != 1 ||
      sentence.shape().back() != words.shape().back())
    throw DimensionError("LfrHead: sentence " + shape_str(sentence.shape()) +
                         " does not match words " + shape_str(words.shape()));
  if (n > positional_.dim(0))
    throw DimensionError("LfrHead: " + std::to_string(n) +
                         " words exceed the positional table of " +
                         std::to_string(positional_.dim(0)));
  Tensor e = slice(positional_, 0, 0, n);
  Tensor seq = concat({add(words, e), sentence}, seq_axis);
  return reduce_mean(relu(matmul(seq, projection_)), seq_axis);
}

Tensor LfrHead::reconstruct(const Tensor& decoded, bool training) const {
  Tensor h = decoded;
  for (const auto& layer : trunk_) h = layer.forward(h, training);
  return reduce_mean(h, h.rank() - 2);
}

void LfrHead::register_into(const std::string& prefix, ParamRegistry& reg) {
  reg.add_param(join_name(prefix, "projection"), projection_);
  for (std::size_t i = 0; i < trunk_.size(); ++i)
    trunk_[i].register_into(join_name(prefix, "trunk" + std::to_string(i)), reg);
}

Tensor lfr_loss(const Tensor& reconstructed, const Tensor& target) {
  return mse_loss(reconstructed, target);
}

}  // namespace m3att
