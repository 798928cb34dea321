#include "m3att/attention_dump.hpp"

#include "m3att/trainer.hpp"

#include <algorithm>
#include <cmath>

namespace m3att {

Raster heatmap(const std::vector<double>& values, std::size_t rows, std::size_t cols) {
  if (values.size() != rows * cols) throw DimensionError("heatmap: value count mismatch");
  Raster r{cols, rows, 1, std::vector<std::uint8_t>(values.size(), 0)};
  if (values.empty()) return r;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double span = *hi - *lo;
  if (span <= 0.0) return r;
  for (std::size_t i = 0; i < values.size(); ++i)
    r.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * (values[i] - *lo) / span));
  return r;
}

namespace {

void add(AttentionDump& dump, const std::string& name, const Tensor& t) {
  if (!t.defined()) return;
  // Drop the leading batch axis of the single-sample forward.
  Shape shape(t.shape().begin() + 1, t.shape().end());
  std::vector<double> values = t.to_vector();
  dump.raw.records.push_back({name, shape, values});
  const std::size_t cols = shape.back();
  const std::size_t rows = values.size() / cols;
  dump.heatmaps.push_back({name, heatmap(values, rows, cols)});
}

}  // namespace

AttentionDump collect_attention(const Model& model, const Sample& sample) {
  NoGradGuard no_grad;
  const Batch batch = make_batch({sample}, {0}, model.config());
  const ModelOutput out = model.forward(batch.images, batch.tokens, false, false);
  AttentionDump dump;
  for (std::size_t i = 0; i < out.decoder.layers.size(); ++i) {
    const auto& layer = out.decoder.layers[i];
    const std::string p = "layer" + std::to_string(i);
    if (layer.mutual) {
      const auto& m = *layer.mutual;
      add(dump, p + ".a_mut", m.logits_lav);
      if (m.logits_val.node() != m.logits_lav.node()) add(dump, p + ".a_mut_val", m.logits_val);
      add(dump, p + ".lav", m.weights_lav);
      add(dump, p + ".val", m.weights_val);
    }
    add(dump, p + ".generic", layer.generic_weights);
    add(dump, p + ".cross", layer.cross_weights);
  }
  for (std::size_t i = 0; i < out.decoder.imi.size(); ++i)
    add(dump, "imi" + std::to_string(i) + ".a_l", out.decoder.imi[i].attention);
  return dump;
}

void write_attention_dump(const AttentionDump& dump, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw CheckpointError("cannot create " + out_dir.string() + ": " + ec.message());
  write_archive(out_dir / "attention.m3at", dump.raw);
  for (const auto& h : dump.heatmaps) write_netpbm(out_dir / (h.name + ".pgm"), h.raster);
}

}  // namespace m3att
