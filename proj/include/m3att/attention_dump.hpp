#pragma once

// Per-layer attention maps for a single sample: raw tensors in the archive
// format plus min-max scaled grayscale heatmaps.

#include "m3att/archive.hpp"
#include "m3att/image_io.hpp"
#include "m3att/model.hpp"
#include "m3att/synthetic.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace m3att {

struct NamedRaster {
  std::string name;
  Raster raster;
};

struct AttentionDump {
  Archive raw;  // records named layer{i}.a_mut, layer{i}.lav, layer{i}.val, imi{i}.a_l, ...
  std::vector<NamedRaster> heatmaps;
};

// rows x cols values scaled to 0..255 by their min and max (constant -> 0).
Raster heatmap(const std::vector<double>& values, std::size_t rows, std::size_t cols);

AttentionDump collect_attention(const Model& model, const Sample& sample);

// Writes attention.m3at and one PGM per heatmap.
void write_attention_dump(const AttentionDump& dump, const std::filesystem::path& out_dir);

}  // namespace m3att
