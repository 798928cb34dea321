#include "m3att/language_encoder.hpp"

#include <cmath>

namespace m3att {

LstmCell::LstmCell(std::size_t input, std::size_t hidden, Rng& rng) : hidden_(hidden) {
  const double limit_x = std::sqrt(6.0 / static_cast<double>(input + 4 * hidden));
  const double limit_h = std::sqrt(6.0 / static_cast<double>(5 * hidden));
  std::vector<double> wx(input * 4 * hidden);
  std::vector<double> wh(hidden * 4 * hidden);
  for (auto& v : wx) v = rng.uniform(-limit_x, limit_x);
  for (auto& v : wh) v = rng.uniform(-limit_h, limit_h);
  std::vector<double> b(4 * hidden, 0.0);
  // Forget gate starts open.
  for (std::size_t j = hidden; j < 2 * hidden; ++j) b[j] = 1.0;
  w_input_ = Tensor::from({input, 4 * hidden}, std::move(wx), true);
  w_hidden_ = Tensor::from({hidden, 4 * hidden}, std::move(wh), true);
  bias_ = Tensor::from({4 * hidden}, std::move(b), true);
}

Tensor LstmCell::input_gates(const Tensor& x) const { return add(matmul(x, w_input_), bias_); }

std::pair<Tensor, Tensor> LstmCell::step(const Tensor& gates_x, const Tensor& h,
                                         const Tensor& c) const {
  const std::size_t hd = hidden_;
  Tensor gates = add(gates_x, matmul(h, w_hidden_));
  Tensor i = sigmoid(slice(gates, 1, 0, hd));
  Tensor f = sigmoid(slice(gates, 1, hd, hd));
  Tensor g = tanh(slice(gates, 1, 2 * hd, hd));
  Tensor o = sigmoid(slice(gates, 1, 3 * hd, hd));
  Tensor c_next = add(mul(f, c), mul(i, g));
  Tensor h_next = mul(o, tanh(c_next));
  return {h_next, c_next};
}

void LstmCell::register_into(const std::string& prefix, ParamRegistry& reg) {
  reg.add_param(join_name(prefix, "w_input"), w_input_);
  reg.add_param(join_name(prefix, "w_hidden"), w_hidden_);
  reg.add_param(join_name(prefix, "bias"), bias_);
}

LanguageEncoder::LanguageEncoder(std::size_t vocab, std::size_t width, int pad_id, Rng& rng)
    : pad_id_(pad_id), width_(width) {
  if (width % 2 != 0) throw DimensionError("LanguageEncoder: width must be even");
  std::vector<double> t(vocab * width);
  for (auto& v : t) v = rng.normal(1.0);
  table_ = Tensor::from({vocab, width}, std::move(t), true);
  const std::size_t hidden = width / 2;
  forward_cell_ = LstmCell(width, hidden, rng);
  backward_cell_ = LstmCell(width, hidden, rng);
  word_proj_ = Linear(2 * hidden, width, {}, rng);
  sentence_proj_ = Linear(2 * hidden, width, {}, rng);
}

LanguageFeatures LanguageEncoder::forward(const TokenBatch& tokens, bool training) const {
  const std::size_t b = tokens.batch;
  const std::size_t n = tokens.length;
  if (tokens.ids.size() != b * n || b == 0 || n == 0)
    throw DimensionError("LanguageEncoder: token batch is not [batch x length]");
  for (int id : tokens.ids)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab())
      throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(vocab()));

  LanguageFeatures out;
  out.pad.resize(b * n);
  for (std::size_t i = 0; i < b * n; ++i) out.pad[i] = tokens.ids[i] == pad_id_ ? 1 : 0;

  const std::size_t hd = width_ / 2;
  Tensor x = embedding(table_, tokens.ids, {b, n});
  Tensor gx_f = forward_cell_.input_gates(x);
  Tensor gx_b = backward_cell_.input_gates(x);

  // keep[t]: 1 where position t holds a real token, so pads carry the state.
  std::vector<Tensor> keep(n);
  std::vector<Tensor> drop(n);
  for (std::size_t t = 0; t < n; ++t) {
    std::vector<double> k(b * hd);
    std::vector<double> d(b * hd);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < hd; ++j) {
        const bool real = out.pad[i * n + t] == 0;
        k[i * hd + j] = real ? 1.0 : 0.0;
        d[i * hd + j] = real ? 0.0 : 1.0;
      }
    keep[t] = Tensor::from({b, hd}, std::move(k));
    drop[t] = Tensor::from({b, hd}, std::move(d));
  }

  auto run = [&](const LstmCell& cell, const Tensor& gx, bool reverse) {
    Tensor h = Tensor::zeros({b, hd});
    Tensor c = Tensor::zeros({b, hd});
    std::vector<Tensor> states(n);
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t t = reverse ? n - 1 - s : s;
      Tensor g = reshape(slice(gx, 1, t, 1), {b, 4 * hd});
      auto [h_new, c_new] = cell.step(g, h, c);
      h = add(mul(keep[t], h_new), mul(drop[t], h));
      c = add(mul(keep[t], c_new), mul(drop[t], c));
      states[t] = reshape(h, {b, 1, hd});
    }
    return std::pair{concat(states, 1), h};
  };
  auto [states_f, final_f] = run(forward_cell_, gx_f, false);
  auto [states_b, final_b] = run(backward_cell_, gx_b, true);

  out.words = word_proj_.forward(concat({states_f, states_b}, 2), training);
  out.sentence =
      sentence_proj_.forward(reshape(concat({final_f, final_b}, 1), {b, 1, 2 * hd}), training);
  return out;
}

void LanguageEncoder::register_into(const std::string& prefix, ParamRegistry& reg) {
  reg.add_param(join_name(prefix, "embedding"), table_);
  forward_cell_.register_into(join_name(prefix, "lstm_fwd"), reg);
  backward_cell_.register_into(join_name(prefix, "lstm_bwd"), reg);
  word_proj_.register_into(join_name(prefix, "word_proj"), reg);
  sentence_proj_.register_into(join_name(prefix, "sentence_proj"), reg);
}

}  // namespace m3att
