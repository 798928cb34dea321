#include "m3att/image_io.hpp"

#include <cctype>
#include <fstream>
#include <iterator>
#include <string>

namespace m3att {

std::vector<std::uint8_t> encode_netpbm(const Raster& raster) {
  if (raster.channels != 1 && raster.channels != 3)
    throw ImageError("netpbm: unsupported channel count " + std::to_string(raster.channels));
  if (raster.pixels.size() != raster.width * raster.height * raster.channels)
    throw ImageError("netpbm: pixel buffer does not match dimensions");
  const std::string header = std::string(raster.channels == 3 ? "P6" : "P5") + "\n" +
                             std::to_string(raster.width) + " " + std::to_string(raster.height) +
                             "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), raster.pixels.begin(), raster.pixels.end());
  return out;
}

namespace {

// Reads the next whitespace-delimited header integer, skipping comments.
std::size_t header_int(const std::vector<std::uint8_t>& b, std::size_t& pos) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::size_t v = 0;
  std::size_t digits = 0;
  while (pos < b.size() && std::isdigit(b[pos])) {
    v = v * 10 + (b[pos++] - '0');
    if (++digits > 9) throw ImageError("netpbm: header value too large");
  }
  if (digits == 0) throw ImageError("netpbm: malformed header");
  return v;
}

}  // namespace

Raster decode_netpbm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw ImageError("netpbm: expected P5 or P6 magic");
  Raster r;
  r.channels = bytes[1] == '6' ? 3 : 1;
  std::size_t pos = 2;
  r.width = header_int(bytes, pos);
  r.height = header_int(bytes, pos);
  const std::size_t maxval = header_int(bytes, pos);
  if (maxval != 255) throw ImageError("netpbm: only maxval 255 is supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos]))
    throw ImageError("netpbm: malformed header");
  ++pos;
  const std::size_t n = r.width * r.height * r.channels;
  if (bytes.size() - pos != n) throw ImageError("netpbm: pixel data has the wrong length");
  r.pixels.assign(bytes.begin() + static_cast<long>(pos), bytes.end());
  return r;
}

void write_netpbm(const std::filesystem::path& path, const Raster& raster) {
  const auto bytes = encode_netpbm(raster);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ImageError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ImageError("write failed for " + path.string());
}

Raster read_netpbm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_netpbm(bytes);
  } catch (const ImageError& e) {
    throw ImageError(path.string() + ": " + e.what());
  }
}

}  // namespace m3att
