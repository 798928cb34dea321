#include "m3att/archive.hpp"

#include "m3att/nn.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace m3att {

namespace {

template <typename T>
void put(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
  }

  std::string get_string(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n)
      throw CheckpointError(std::string("truncated archive while reading ") + what);
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const TensorRecord* Archive::find(const std::string& name) const {
  for (const auto& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

std::string encode_archive(const Archive& archive) {
  std::string out(kArchiveMagic, 4);
  put<std::uint32_t>(out, kArchiveVersion);
  put<std::uint64_t>(out, archive.config.size());
  out += archive.config;
  put<std::uint64_t>(out, fnv1a64(archive.config));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(archive.records.size()));
  for (const auto& r : archive.records) {
    if (shape_numel(r.shape) != r.values.size())
      throw CheckpointError("record " + r.name + " has inconsistent shape");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out += r.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.shape.size()));
    for (auto e : r.shape) put<std::uint64_t>(out, e);
    for (double v : r.values) put<double>(out, v);
  }
  return out;
}

Archive decode_archive(const std::string& bytes) {
  Reader in(bytes);
  if (in.get_string(4, "magic") != std::string(kArchiveMagic, 4))
    throw CheckpointError("bad magic: not an M3AT archive");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kArchiveVersion)
    throw CheckpointError("unsupported archive version " + std::to_string(version));
  Archive a;
  const auto config_len = in.get<std::uint64_t>("config length");
  a.config = in.get_string(config_len, "config");
  const auto hash = in.get<std::uint64_t>("config hash");
  if (hash != fnv1a64(a.config)) throw CheckpointError("config hash mismatch");
  const auto count = in.get<std::uint32_t>("record count");
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord r;
    const auto name_len = in.get<std::uint32_t>("name length");
    r.name = in.get_string(name_len, "name");
    const auto rank = in.get<std::uint32_t>("rank");
    for (std::uint32_t k = 0; k < rank; ++k) r.shape.push_back(in.get<std::uint64_t>("extent"));
    const std::size_t n = shape_numel(r.shape);
    if (rank == 0 || n > in.remaining() / sizeof(double))
      throw CheckpointError("record " + r.name + " has an invalid shape");
    r.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) r.values[k] = in.get<double>("values");
    a.records.push_back(std::move(r));
  }
  if (!in.done()) throw CheckpointError("trailing bytes after archive");
  return a;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  const std::string bytes = encode_archive(archive);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for " + path.string());
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return decode_archive(ss.str());
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace m3att
