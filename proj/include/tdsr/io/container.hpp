#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace tdsr::io {

/// Single-file array container used for model checkpoints, detector weights,
/// cached detection targets and prepared patch sets.
///
/// Layout: 8-byte magic "TDSRCKPT", little-endian u32 header length, a JSON
/// header, then the raw little-endian arrays in header order. The header
/// records the format version, payload size and an FNV-1a checksum of the
/// payload, so truncation and bit rot are reported as "corrupt checkpoint".
inline constexpr int kFormatVersion = 1;

enum class DType { F32, F64 };

struct ArrayRecord {
  std::string name;
  std::vector<int> shape;
  DType dtype = DType::F32;
  std::vector<double> values;
};

struct Container {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<ArrayRecord> arrays;

  const ArrayRecord& get(const std::string& name) const;
  bool has(const std::string& name) const;
};

std::vector<unsigned char> serialize(const Container& c);
Container deserialize(const std::vector<unsigned char>& bytes);

/// Writes via a temporary file and rename, so readers never see a partial file.
void write_container(const Container& c, const std::filesystem::path& path);
Container read_container(const std::filesystem::path& path);

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes);

}  // namespace tdsr::io
