#pragma once

// Binary tensor archive used for checkpoints and raw attention dumps.
//
//   "M3AT" | u32 version | u64 config length | config text | u64 config hash
//   | u32 record count | records
//   record: u32 name length | name | u32 rank | u64 extents[rank]
//           | f64 values[prod(extents)]
//
// All integers and floats are little-endian. The config hash is FNV-1a 64 of
// the config text; dumps carry an empty config.

#include "m3att/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace m3att {

inline constexpr char kArchiveMagic[4] = {'M', '3', 'A', 'T'};
inline constexpr std::uint32_t kArchiveVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TensorRecord {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Archive {
  std::string config;
  std::vector<TensorRecord> records;

  const TensorRecord* find(const std::string& name) const;
};

std::string encode_archive(const Archive& archive);
Archive decode_archive(const std::string& bytes);

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

}  // namespace m3att
