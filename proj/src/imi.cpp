#include "m3att/imi.hpp"

namespace m3att {

std::string_view to_string(ImiMode mode) {
  switch (mode) {
    case ImiMode::kFull: return "full";
    case ImiMode::kStar: return "imi_star";
    case ImiMode::kOff: return "off";
  }
  return "off";
}

ImiMode parse_imi_mode(std::string_view text) {
  if (text == "full") return ImiMode::kFull;
  if (text == "imi_star") return ImiMode::kStar;
  if (text == "off") return ImiMode::kOff;
  throw ConfigError("unknown imi mode '" + std::string(text) + "'");
}

ImiBlock::ImiBlock(std::size_t width, Rng& rng)
    : language_transform_(width, width, {}, rng),
      attention_proj_(width, width, {.activation = Activation::kRelu, .bias = false}, rng),
      value_proj_(width, width, {.activation = Activation::kRelu, .bias = false}, rng),
      gate_(Tensor::scalar(0.0, true)),
      norm_(width) {}

ImiState ImiBlock::forward(const Tensor& decoded, const Tensor& language_prev,
                           const Tensor& words, ImiMode mode, const Tensor& lang_mask,
                           bool training) const {
  if (decoded.shape() != language_prev.shape() || decoded.shape() != words.shape())
    throw DimensionError("ImiBlock: shapes " + shape_str(decoded.shape()) + ", " +
                         shape_str(language_prev.shape()) + ", " + shape_str(words.shape()) +
                         " must agree");
  ImiState s;
  if (mode == ImiMode::kOff) {
    s.output = decoded;
    s.language = language_prev;
    return s;
  }
  if (mode == ImiMode::kFull) {
    s.language = language_transform_.forward(language_prev, training);
    Tensor query = attention_proj_.forward(decoded, training);
    s.attention = softmax_last_axis(matmul(query, transpose(s.language)), lang_mask);
    Tensor values = value_proj_.forward(s.language, training);
    s.injected = matmul(s.attention, values);
  } else {
    s.language = language_prev;
    s.injected = words;
  }
  s.output = norm_.forward(add(decoded, mul(s.injected, gate_)), decoded.rank() - 1, training);
  return s;
}

void ImiBlock::register_into(const std::string& prefix, ParamRegistry& reg) {
  language_transform_.register_into(join_name(prefix, "language_transform"), reg);
  attention_proj_.register_into(join_name(prefix, "attention_proj"), reg);
  value_proj_.register_into(join_name(prefix, "value_proj"), reg);
  reg.add_param(join_name(prefix, "gate"), gate_);
  norm_.register_into(join_name(prefix, "bn"), reg);
}

ImiChain::ImiChain(std::size_t width, std::size_t decoder_layers, ImiMode mode, Rng& rng)
    : mode_(mode) {
  for (std::size_t i = 0; i + 1 < decoder_layers; ++i) blocks_.emplace_back(width, rng);
}

void ImiChain::register_into(const std::string& prefix, ParamRegistry& reg) {
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].register_into(join_name(prefix, "block" + std::to_string(i)), reg);
}

}  // namespace m3att
