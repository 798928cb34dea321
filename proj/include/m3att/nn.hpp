#pragma once

// Parameterized building blocks: linear/conv layers, normalization, attention
// and positional tables. Every block lists its tensors into a ParamRegistry
// under a dotted name so checkpoints and optimizers can find them.

#include "m3att/tensor.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace m3att {

// Deterministic per-component random streams: a component's initial values
// depend only on (seed, name), never on construction order.
class Rng {
 public:
  Rng(std::uint64_t seed, const std::string& stream);
  double normal(double stddev);
  double uniform(double lo, double hi);
  std::uint64_t next();

 private:
  std::mt19937_64 engine_;
};

std::uint64_t fnv1a64(const std::string& text);

struct RegisteredTensor {
  std::string name;
  Tensor tensor;
};

class ParamRegistry {
 public:
  void add_param(const std::string& name, Tensor t);
  void add_buffer(const std::string& name, Tensor t);
  const std::vector<RegisteredTensor>& params() const { return params_; }
  const std::vector<RegisteredTensor>& buffers() const { return buffers_; }
  std::size_t param_count() const;
  void zero_grad();

 private:
  std::vector<RegisteredTensor> params_;
  std::vector<RegisteredTensor> buffers_;
};

std::string join_name(const std::string& prefix, const std::string& name);

enum class Activation { kNone, kRelu };

class BatchNorm {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels);

  // Channel axis is the last axis for rows ([..., C]) and axis 1 for maps.
  Tensor forward(const Tensor& x, std::size_t channel_axis, bool training);
  void register_into(const std::string& prefix, ParamRegistry& reg);

  std::size_t channels() const { return gamma_.numel(); }
  Tensor& gamma() { return gamma_; }
  Tensor& beta() { return beta_; }
  Tensor& running_mean() { return running_mean_; }
  Tensor& running_var() { return running_var_; }

 private:
  Tensor gamma_;
  Tensor beta_;
  Tensor running_mean_;
  Tensor running_var_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t width);
  Tensor forward(const Tensor& x) const;
  void register_into(const std::string& prefix, ParamRegistry& reg);

  Tensor& gamma() { return gamma_; }
  Tensor& beta() { return beta_; }

 private:
  Tensor gamma_;
  Tensor beta_;
};

struct LinearOptions {
  Activation activation = Activation::kNone;
  bool batch_norm = false;
  bool bias = true;
};

// y = act(norm(x W + b)) applied over the last axis.
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, LinearOptions options, Rng& rng);

  Tensor forward(const Tensor& x, bool training) const;
  void register_into(const std::string& prefix, ParamRegistry& reg);

  std::size_t in_features() const { return weight_.dim(0); }
  std::size_t out_features() const { return weight_.dim(1); }
  const LinearOptions& options() const { return options_; }
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }
  BatchNorm* norm() { return norm_ ? &*norm_ : nullptr; }

 private:
  LinearOptions options_;
  Tensor weight_;  // [in x out]
  Tensor bias_;    // [out]
  mutable std::optional<BatchNorm> norm_;
};

struct ConvOptions {
  Activation activation = Activation::kNone;
  bool batch_norm = false;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel, ConvOptions options, Rng& rng);
  Tensor forward(const Tensor& x, bool training) const;
  void register_into(const std::string& prefix, ParamRegistry& reg);

  Tensor& kernel() { return kernel_; }
  Tensor& bias() { return bias_; }

 private:
  ConvOptions options_;
  Tensor kernel_;  // [out x in x k x k]
  Tensor bias_;
  mutable std::optional<BatchNorm> norm_;
};

// Additive key mask: 0 for visible keys, kMaskedLogit for hidden ones.
inline constexpr double kMaskedLogit = -1e9;

// Builds an additive [B, L] mask from per-position pad flags.
Tensor additive_key_mask(const std::vector<std::uint8_t>& pad, std::size_t batch,
                         std::size_t length);

struct AttentionResult {
  Tensor output;   // [B, Lq, C]
  Tensor weights;  // [B, heads, Lq, Lk]
};

// Scaled dot-product attention with per-head query/key/value projections.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t width, std::size_t heads, Rng& rng);

  // q: [B,Lq,C]; k, v: [B,Lk,C]; key_mask: additive [B,Lk] or undefined.
  AttentionResult forward(const Tensor& q, const Tensor& k, const Tensor& v,
                          const Tensor& key_mask = Tensor{}) const;
  void register_into(const std::string& prefix, ParamRegistry& reg);

  std::size_t heads() const { return heads_; }
  std::size_t width() const { return width_; }
  Linear& query_proj() { return wq_; }
  Linear& key_proj() { return wk_; }
  Linear& value_proj() { return wv_; }
  Linear& out_proj() { return wo_; }

 private:
  std::size_t width_ = 0;
  std::size_t heads_ = 1;
  Linear wq_, wk_, wv_, wo_;
};

// e[pos][2i] = sin(pos / 10000^(2i/C)), e[pos][2i+1] = cos(...): [max_len x C].
Tensor sinusoidal_table(std::size_t max_len, std::size_t width);

// Row/column halves for an HxW grid: [H*W x C], C even.
Tensor sinusoidal_table_2d(std::size_t height, std::size_t width, std::size_t channels);

// Overwrites t with the identity (square) or zeros.
void fill_identity(Tensor& t);
void fill_zero(Tensor& t);

}  // namespace m3att
