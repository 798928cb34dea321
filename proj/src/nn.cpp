#include "m3att/nn.hpp"

#include <cmath>
#include <numeric>

namespace m3att {

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Rng::Rng(std::uint64_t seed, const std::string& stream)
    : engine_(seed * 0x9E3779B97F4A7C15ULL ^ fnv1a64(stream)) {}

double Rng::normal(double stddev) {
  // Box-Muller on the raw engine keeps streams identical across standard libraries.
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  const double u1 = (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  return stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

double Rng::uniform(double lo, double hi) {
  return lo + (hi - lo) * (static_cast<double>(engine_() >> 11) * 0x1.0p-53);
}

std::uint64_t Rng::next() { return engine_(); }

// ---- registry ------------------------------------------------------------

std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

void ParamRegistry::add_param(const std::string& name, Tensor t) {
  params_.push_back({name, std::move(t)});
}

void ParamRegistry::add_buffer(const std::string& name, Tensor t) {
  buffers_.push_back({name, std::move(t)});
}

std::size_t ParamRegistry::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void ParamRegistry::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

// ---- normalization -------------------------------------------------------

BatchNorm::BatchNorm(std::size_t channels)
    : gamma_(Tensor::full({channels}, 1.0, true)),
      beta_(Tensor::zeros({channels}, true)),
      running_mean_(Tensor::zeros({channels})),
      running_var_(Tensor::full({channels}, 1.0)) {}

Tensor BatchNorm::forward(const Tensor& x, std::size_t channel_axis, bool training) {
  if (!training) {
    BatchStats running{running_mean_.to_vector(), running_var_.to_vector()};
    return batch_norm(x, gamma_, beta_, channel_axis, kEps, nullptr, &running);
  }
  BatchStats stats;
  Tensor y = batch_norm(x, gamma_, beta_, channel_axis, kEps, &stats, nullptr);
  const double count = static_cast<double>(x.numel() / x.dim(channel_axis));
  auto rm = running_mean_.mutable_data();
  auto rv = running_var_.mutable_data();
  for (std::size_t c = 0; c < rm.size(); ++c) {
    const double unbiased = count > 1.0 ? stats.var[c] * count / (count - 1.0) : stats.var[c];
    rm[c] = (1.0 - kMomentum) * rm[c] + kMomentum * stats.mean[c];
    rv[c] = (1.0 - kMomentum) * rv[c] + kMomentum * unbiased;
  }
  return y;
}

void BatchNorm::register_into(const std::string& prefix, ParamRegistry& reg) {
  reg.add_param(join_name(prefix, "gamma"), gamma_);
  reg.add_param(join_name(prefix, "beta"), beta_);
  reg.add_buffer(join_name(prefix, "running_mean"), running_mean_);
  reg.add_buffer(join_name(prefix, "running_var"), running_var_);
}

LayerNorm::LayerNorm(std::size_t width)
    : gamma_(Tensor::full({width}, 1.0, true)), beta_(Tensor::zeros({width}, true)) {}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gamma_, beta_); }

void LayerNorm::register_into(const std::string& prefix, ParamRegistry& reg) {
  reg.add_param(join_name(prefix, "gamma"), gamma_);
  reg.add_param(join_name(prefix, "beta"), beta_);
}

// ---- linear / conv -------------------------------------------------------

namespace {

Tensor activate(const Tensor& x, Activation a) { return a == Activation::kRelu ? relu(x) : x; }

}  // namespace

Linear::Linear(std::size_t in, std::size_t out, LinearOptions options, Rng& rng)
    : options_(options) {
  if (in == 0 || out == 0) throw DimensionError("Linear: extents must be positive");
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<double> w(in * out);
  for (auto& v : w) v = rng.uniform(-limit, limit);
  weight_ = Tensor::from({in, out}, std::move(w), true);
  if (options_.bias) bias_ = Tensor::zeros({out}, true);
  if (options_.batch_norm) norm_.emplace(out);
}

Tensor Linear::forward(const Tensor& x, bool training) const {
  if (x.shape().back() != in_features())
    throw DimensionError("Linear: input " + shape_str(x.shape()) + " does not match " +
                         std::to_string(in_features()) + " input features");
  Tensor y = matmul(x, weight_);
  if (bias_.defined()) y = add(y, bias_);
  if (norm_) y = norm_->forward(y, y.rank() - 1, training);
  return activate(y, options_.activation);
}

void Linear::register_into(const std::string& prefix, ParamRegistry& reg) {
  reg.add_param(join_name(prefix, "weight"), weight_);
  if (bias_.defined()) reg.add_param(join_name(prefix, "bias"), bias_);
  if (norm_) norm_->register_into(join_name(prefix, "bn"), reg);
}

Conv2d::Conv2d(std::size_t in, std::size_t out, std::size_t kernel, ConvOptions options,
               Rng& rng)
    : options_(options) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(in * kernel * kernel));
  std::vector<double> k(out * in * kernel * kernel);
  for (auto& v : k) v = rng.normal(stddev);
  kernel_ = Tensor::from({out, in, kernel, kernel}, std::move(k), true);
  bias_ = Tensor::zeros({out}, true);
  if (options_.batch_norm) norm_.emplace(out);
}

Tensor Conv2d::forward(const Tensor& x, bool training) const {
  Tensor y = conv2d(x, kernel_, bias_);
  if (norm_) y = norm_->forward(y, y.rank() - 3, training);
  return activate(y, options_.activation);
}

void Conv2d::register_into(const std::string& prefix, ParamRegistry& reg) {
  reg.add_param(join_name(prefix, "kernel"), kernel_);
  reg.add_param(join_name(prefix, "bias"), bias_);
  if (norm_) norm_->register_into(join_name(prefix, "bn"), reg);
}

// ---- attention -----------------------------------------------------------

Tensor additive_key_mask(const std::vector<std::uint8_t>& pad, std::size_t batch,
                         std::size_t length) {
  if (pad.size() != batch * length)
    throw DimensionError("additive_key_mask: pad flags do not match [" + std::to_string(batch) +
                         "x" + std::to_string(length) + "]");
  std::vector<double> m(pad.size());
  for (std::size_t i = 0; i < pad.size(); ++i) m[i] = pad[i] ? kMaskedLogit : 0.0;
  return Tensor::from({batch, length}, std::move(m));
}

MultiHeadAttention::MultiHeadAttention(std::size_t width, std::size_t heads, Rng& rng)
    : width_(width), heads_(heads) {
  if (heads == 0 || width % heads != 0)
    throw DimensionError("MultiHeadAttention: width " + std::to_string(width) +
                         " is not divisible by " + std::to_string(heads) + " heads");
  wq_ = Linear(width, width, {}, rng);
  wk_ = Linear(width, width, {}, rng);
  wv_ = Linear(width, width, {}, rng);
  wo_ = Linear(width, width, {}, rng);
}

AttentionResult MultiHeadAttention::forward(const Tensor& q, const Tensor& k, const Tensor& v,
                                            const Tensor& key_mask) const {
  const bool unbatched = q.rank() == 2;
  auto lift = [&](const Tensor& t) {
    return t.rank() == 2 ? reshape(t, {1, t.dim(0), t.dim(1)}) : t;
  };
  Tensor q3 = lift(q);
  Tensor k3 = lift(k);
  Tensor v3 = lift(v);
  if (q3.rank() != 3 || k3.rank() != 3 || v3.rank() != 3 || q3.dim(2) != width_ ||
      k3.dim(2) != width_ || v3.dim(2) != width_ || k3.dim(1) != v3.dim(1) ||
      k3.dim(0) != q3.dim(0) || v3.dim(0) != q3.dim(0))
    throw DimensionError("MultiHeadAttention: incompatible inputs " + shape_str(q.shape()) +
                         ", " + shape_str(k.shape()) + ", " + shape_str(v.shape()));
  const std::size_t b = q3.dim(0);
  const std::size_t lq = q3.dim(1);
  const std::size_t lk = k3.dim(1);
  const std::size_t d = width_ / heads_;

  Tensor qh = permute(reshape(wq_.forward(q3, false), {b, lq, heads_, d}), {0, 2, 1, 3});
  Tensor kh = permute(reshape(wk_.forward(k3, false), {b, lk, heads_, d}), {0, 2, 3, 1});
  Tensor vh = permute(reshape(wv_.forward(v3, false), {b, lk, heads_, d}), {0, 2, 1, 3});
  Tensor logits = scale(matmul(qh, kh), 1.0 / std::sqrt(static_cast<double>(d)));

  Tensor mask;
  if (key_mask.defined()) {
    if (key_mask.numel() != b * lk)
      throw DimensionError("MultiHeadAttention: key mask " + shape_str(key_mask.shape()) +
                           " does not match " + std::to_string(lk) + " keys");
    std::vector<double> m(b * heads_ * lk);
    const auto src = key_mask.data();
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t h = 0; h < heads_; ++h)
        for (std::size_t j = 0; j < lk; ++j) m[(i * heads_ + h) * lk + j] = src[i * lk + j];
    mask = Tensor::from({b, heads_, lk}, std::move(m));
  }
  Tensor weights = softmax_last_axis(logits, mask);
  Tensor heads_out = permute(matmul(weights, vh), {0, 2, 1, 3});
  Tensor out = wo_.forward(reshape(heads_out, {b, lq, width_}), false);
  if (unbatched) out = reshape(out, {lq, width_});
  return {out, weights};
}

void MultiHeadAttention::register_into(const std::string& prefix, ParamRegistry& reg) {
  wq_.register_into(join_name(prefix, "q"), reg);
  wk_.register_into(join_name(prefix, "k"), reg);
  wv_.register_into(join_name(prefix, "v"), reg);
  wo_.register_into(join_name(prefix, "o"), reg);
}

// ---- positional tables ---------------------------------------------------

Tensor sinusoidal_table(std::size_t max_len, std::size_t width) {
  std::vector<double> e(max_len * width);
  for (std::size_t pos = 0; pos < max_len; ++pos)
    for (std::size_t j = 0; j < width; ++j) {
      const std::size_t pair = j / 2;
      const double freq =
          std::pow(10000.0, static_cast<double>(2 * pair) / static_cast<double>(width));
      const double angle = static_cast<double>(pos) / freq;
      e[pos * width + j] = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return Tensor::from({max_len, width}, std::move(e));
}

Tensor sinusoidal_table_2d(std::size_t height, std::size_t width, std::size_t channels) {
  if (channels % 2 != 0)
    throw DimensionError("sinusoidal_table_2d: channel count must be even");
  const std::size_t half = channels / 2;
  Tensor rows = sinusoidal_table(height, half);
  Tensor cols = sinusoidal_table(width, half);
  std::vector<double> e(height * width * channels);
  const auto pr = rows.data();
  const auto pc = cols.data();
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      double* dst = e.data() + (y * width + x) * channels;
      for (std::size_t j = 0; j < half; ++j) {
        dst[j] = pr[y * half + j];
        dst[half + j] = pc[x * half + j];
      }
    }
  return Tensor::from({height * width, channels}, std::move(e));
}

void fill_identity(Tensor& t) {
  if (t.rank() != 2 || t.dim(0) != t.dim(1))
    throw DimensionError("fill_identity: needs a square matrix, got " + shape_str(t.shape()));
  auto d = t.mutable_data();
  const std::size_t n = t.dim(0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) d[i * n + j] = i == j ? 1.0 : 0.0;
}

void fill_zero(Tensor& t) {
  auto d = t.mutable_data();
  std::fill(d.begin(), d.end(), 0.0);
}

}  // namespace m3att
