#pragma once

// Binary netpbm rasters: P6 (RGB) and P5 (grayscale), maxval 255.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace m3att {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Raster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;       // 1 or 3
  std::vector<std::uint8_t> pixels;  // row-major, interleaved channels
};

std::vector<std::uint8_t> encode_netpbm(const Raster& raster);
Raster decode_netpbm(const std::vector<std::uint8_t>& bytes);

void write_netpbm(const std::filesystem::path& path, const Raster& raster);
Raster read_netpbm(const std::filesystem::path& path);

}  // namespace m3att
