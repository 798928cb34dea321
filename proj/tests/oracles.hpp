#pragma once

// Plain-loop reference implementations used to check the library. Every
// matrix is a row-major std::vector<double>; nothing here touches the tape.

#include "m3att/imi.hpp"
#include "m3att/lfr.hpp"
#include "m3att/mutual_attention.hpp"
#include "m3att/nn.hpp"

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace oracle {

using Mat = std::vector<double>;

inline Mat values(const m3att::Tensor& t) { return t.to_vector(); }

inline Mat random(std::size_t n, m3att::Rng& rng, double scale = 1.0) {
  Mat m(n);
  for (auto& v : m) v = rng.uniform(-scale, scale);
  return m;
}

// a [m x k] * b [k x n]
inline Mat matmul(const Mat& a, const Mat& b, std::size_t m, std::size_t k, std::size_t n) {
  Mat c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  return c;
}

inline Mat transpose(const Mat& a, std::size_t m, std::size_t n) {
  Mat t(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
  return t;
}

// x [m x in] * W [in x out] + b
inline Mat affine(const Mat& x, const Mat& w, const Mat& b, std::size_t m, std::size_t in,
                  std::size_t out) {
  Mat y = matmul(x, w, m, in, out);
  if (!b.empty())
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < out; ++j) y[i * out + j] += b[j];
  return y;
}

inline Mat relu(Mat x) {
  for (auto& v : x) v = v > 0.0 ? v : 0.0;
  return x;
}

// Row-wise softmax; hidden[j] excludes column j unless every column is hidden.
inline Mat softmax_rows(const Mat& x, std::size_t rows, std::size_t cols,
                        const std::vector<bool>& hidden = {}) {
  Mat y(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    bool any = false;
    for (std::size_t j = 0; j < cols; ++j) any = any || hidden.empty() || !hidden[j];
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const bool skip = any && !hidden.empty() && hidden[j];
      y[i * cols + j] = skip ? 0.0 : std::exp(x[i * cols + j]);
      total += y[i * cols + j];
    }
    for (std::size_t j = 0; j < cols; ++j) y[i * cols + j] /= total;
  }
  return y;
}

// Normalizes each row over its columns, population variance.
inline Mat batch_norm_columns(const Mat& x, std::size_t rows, std::size_t cols, const Mat& gamma,
                              const Mat& beta, double eps) {
  Mat y(rows * cols);
  for (std::size_t j = 0; j < cols; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < rows; ++i) mean += x[i * cols + j];
    mean /= static_cast<double>(rows);
    double var = 0.0;
    for (std::size_t i = 0; i < rows; ++i) var += std::pow(x[i * cols + j] - mean, 2);
    var /= static_cast<double>(rows);
    for (std::size_t i = 0; i < rows; ++i)
      y[i * cols + j] = gamma[j] * (x[i * cols + j] - mean) / std::sqrt(var + eps) + beta[j];
  }
  return y;
}

inline Mat layer_norm_rows(const Mat& x, std::size_t rows, std::size_t cols, const Mat& gamma,
                           const Mat& beta, double eps) {
  Mat y(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mean += x[i * cols + j];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) var += std::pow(x[i * cols + j] - mean, 2);
    var /= static_cast<double>(cols);
    for (std::size_t j = 0; j < cols; ++j)
      y[i * cols + j] = gamma[j] * (x[i * cols + j] - mean) / std::sqrt(var + eps) + beta[j];
  }
  return y;
}

// Same-padded stride-1 convolution of one [cin x h x w] image.
inline Mat conv2d(const Mat& x, const Mat& k, const Mat& bias, std::size_t cin, std::size_t h,
                  std::size_t w, std::size_t cout, std::size_t ks) {
  Mat y(cout * h * w, 0.0);
  const long pad = static_cast<long>(ks / 2);
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t yy = 0; yy < h; ++yy)
      for (std::size_t xx = 0; xx < w; ++xx) {
        double s = bias.empty() ? 0.0 : bias[o];
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t dy = 0; dy < ks; ++dy)
            for (std::size_t dx = 0; dx < ks; ++dx) {
              const long sy = static_cast<long>(yy + dy) - pad;
              const long sx = static_cast<long>(xx + dx) - pad;
              if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(w))
                continue;
              s += k[((o * cin + c) * ks + dy) * ks + dx] *
                   x[(c * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
            }
        y[(o * h + yy) * w + xx] = s;
      }
  return y;
}

// ---- model components --------------------------------------------------------

struct Affine {
  Mat w, b;
  std::size_t in = 0, out = 0;
};

inline Affine take(m3att::Linear& l) {
  return {values(l.weight()), l.bias().defined() ? values(l.bias()) : Mat{}, l.in_features(),
          l.out_features()};
}

inline Mat apply(const Affine& a, const Mat& x, std::size_t rows) {
  return affine(x, a.w, a.b, rows, a.in, a.out);
}

struct MutualOracleOut {
  Mat logits_lav, logits_val;  // [N x HW]
  Mat weights_lav;             // [N x HW]
  Mat weights_val;             // [HW x N]
  Mat lav;                     // [N x C]
  Mat val;                     // [HW x C]
  Mat fused;                   // [N x HW]
  Mat output;                  // [N x C]
};

// Mutual attention for one instance. pad marks language positions hidden
// from the vision-queries-language softmax.
inline MutualOracleOut mutual_attention(m3att::MutualAttention& m, const Mat& fq, const Mat& fenc,
                                        std::size_t n, std::size_t hw, std::size_t c,
                                        const std::vector<bool>& pad) {
  const bool independent = m.sharing() == m3att::AttentionSharing::kIndependent;
  const Mat lk = apply(take(m.lang_key()), fq, n);
  const Mat lv = apply(take(m.lang_value()), fq, n);
  const Mat vk = apply(take(m.vis_key()), fenc, hw);
  const Mat vv = apply(take(m.vis_value()), fenc, hw);
  MutualOracleOut o;
  auto logits = [&](const Mat& a, const Mat& b) {
    Mat l(n * hw, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < hw; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < c; ++p) s += a[i * c + p] * b[j * c + p];
        l[i * hw + j] = s / std::sqrt(static_cast<double>(c));
      }
    return l;
  };
  o.logits_lav = logits(lk, vk);
  o.logits_val = independent ? logits(apply(take(m.lang_key_val()), fq, n),
                                      apply(take(m.vis_key_val()), fenc, hw))
                             : o.logits_lav;
  o.weights_lav = softmax_rows(o.logits_lav, n, hw);
  o.weights_val = softmax_rows(transpose(o.logits_val, n, hw), hw, n, pad);
  o.lav = matmul(o.weights_lav, vv, n, hw, c);
  o.val = matmul(o.weights_val, lv, hw, n, c);
  o.fused = matmul(o.lav, transpose(o.val, hw, c), n, c, hw);
  o.output = apply(take(m.out_proj()), o.fused, n);
  return o;
}

struct ImiOracleOut {
  Mat language, attention, injected, output;
};

// One IMI block in training mode (batch statistics) for a [rows x c] batch
// made of `batch` instances of n rows each.
inline ImiOracleOut imi_block(m3att::ImiBlock& blk, const Mat& dec, const Mat& lang_prev,
                              const Mat& words, std::size_t batch, std::size_t n, std::size_t c,
                              bool star, const std::vector<bool>& pad) {
  ImiOracleOut o;
  const double gate = blk.gate().item();
  const std::size_t rows = batch * n;
  if (star) {
    o.language = lang_prev;
    o.injected = words;
  } else {
    o.language = apply(take(blk.language_transform()), lang_prev, rows);
    const Mat q = relu(apply(take(blk.attention_proj()), dec, rows));
    const Mat v = relu(apply(take(blk.value_proj()), o.language, rows));
    o.attention.assign(batch * n * n, 0.0);
    o.injected.assign(rows * c, 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
      Mat logits(n * n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          double s = 0.0;
          for (std::size_t p = 0; p < c; ++p)
            s += q[(b * n + i) * c + p] * o.language[(b * n + j) * c + p];
          logits[i * n + j] = s;
        }
      std::vector<bool> hidden;
      if (!pad.empty()) hidden.assign(pad.begin() + static_cast<long>(b * n),
                                      pad.begin() + static_cast<long>((b + 1) * n));
      const Mat a = softmax_rows(logits, n, n, hidden);
      for (std::size_t i = 0; i < n * n; ++i) o.attention[b * n * n + i] = a[i];
      const Mat vb(v.begin() + static_cast<long>(b * n * c),
                   v.begin() + static_cast<long>((b + 1) * n * c));
      const Mat inj = matmul(a, vb, n, n, c);
      for (std::size_t i = 0; i < n * c; ++i) o.injected[b * n * c + i] = inj[i];
    }
  }
  Mat pre(rows * c);
  for (std::size_t i = 0; i < rows * c; ++i) pre[i] = dec[i] + gate * o.injected[i];
  o.output = batch_norm_columns(pre, rows, c, values(blk.norm().gamma()), values(blk.norm().beta()),
                                m3att::BatchNorm::kEps);
  return o;
}

// mean over the n+1 rows of relu([(words + e) ; sentence] W_proj): [c].
inline Mat lfr_target(const Mat& words, const Mat& sentence, const Mat& proj, const Mat& table,
                      std::size_t n, std::size_t c) {
  Mat seq((n + 1) * c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) seq[i * c + j] = words[i * c + j] + table[i * c + j];
  for (std::size_t j = 0; j < c; ++j) seq[n * c + j] = sentence[j];
  const Mat h = relu(matmul(seq, proj, n + 1, c, c));
  Mat out(c, 0.0);
  for (std::size_t i = 0; i <= n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += h[i * c + j] / static_cast<double>(n + 1);
  return out;
}

// Three linear layers (training-mode batch norm over all rows), then the
// per-instance mean over n rows: [batch x c].
inline Mat lfr_reconstruct(m3att::LfrHead& head, const Mat& dec, std::size_t batch, std::size_t n,
                           std::size_t c, bool batch_norm, bool strict_relu) {
  Mat h = dec;
  const std::size_t rows = batch * n;
  for (std::size_t l = 0; l < 3; ++l) {
    auto& layer = head.trunk(l);
    h = apply(take(layer), h, rows);
    if (batch_norm)
      h = batch_norm_columns(h, rows, c, values(layer.norm()->gamma()),
                             values(layer.norm()->beta()), m3att::BatchNorm::kEps);
    if (l < 2 || strict_relu) h = relu(h);
  }
  Mat out(batch * c, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j)
        out[b * c + j] += h[(b * n + i) * c + j] / static_cast<double>(n);
  return out;
}

// map[i][p] = sum_c rows[i][c] * enc[c][p] for one instance.
inline Mat dynamic_maps(const Mat& rows, const Mat& enc, std::size_t n, std::size_t c,
                        std::size_t hw) {
  Mat out(n * hw, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t k = 0; k < c; ++k) out[i * hw + p] += rows[i * c + k] * enc[k * hw + p];
  return out;
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace oracle
