#pragma once

#include "m3att/nn.hpp"

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace m3att {

class VocabularyError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Row-major [batch x length] token ids.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<int> ids;
};

struct LanguageFeatures {
  Tensor words;                    // F_t: [B, N, C]
  Tensor sentence;                 // F_t': [B, 1, C]
  std::vector<std::uint8_t> pad;   // [B*N], 1 = pad position
};

class LstmCell {
 public:
  LstmCell() = default;
  LstmCell(std::size_t input, std::size_t hidden, Rng& rng);

  std::size_t hidden() const { return hidden_; }
  // Input contribution for every step at once: [B, N, 4H].
  Tensor input_gates(const Tensor& x) const;
  // One step given this step's input gates [B, 4H]; returns (h, c).
  std::pair<Tensor, Tensor> step(const Tensor& gates_x, const Tensor& h, const Tensor& c) const;
  void register_into(const std::string& prefix, ParamRegistry& reg);

 private:
  std::size_t hidden_ = 0;
  Tensor w_input_;   // [in x 4H]
  Tensor w_hidden_;  // [H x 4H]
  Tensor bias_;      // [4H]
};

// Token embedding, bidirectional LSTM, and projections of the per-word states
// and the final state pair to width C.
class LanguageEncoder {
 public:
  LanguageEncoder() = default;
  LanguageEncoder(std::size_t vocab, std::size_t width, int pad_id, Rng& rng);

  LanguageFeatures forward(const TokenBatch& tokens, bool training) const;
  void register_into(const std::string& prefix, ParamRegistry& reg);

  std::size_t vocab() const { return table_.dim(0); }
  int pad_id() const { return pad_id_; }

 private:
  int pad_id_ = 0;
  std::size_t width_ = 0;
  Tensor table_;  // [vocab x C]
  LstmCell forward_cell_;
  LstmCell backward_cell_;
  Linear word_proj_;      // 2H -> C
  Linear sentence_proj_;  // 2H -> C
};

}  // namespace m3att
