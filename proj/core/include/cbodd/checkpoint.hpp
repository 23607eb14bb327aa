#pragma once

// Binary checkpoint layout (all integers little-endian):
//   "CBODD01"
//   repeated: u32 name_length, name bytes (UTF-8), u32 rank, u32 extent * rank,
//             f64 payload * prod(extents)
//   u32 CRC-32 of every preceding byte

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cbodd/nn.hpp"

namespace cbodd {

inline constexpr char kCheckpointMagic[] = "CBODD01";

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointRecord>& records);
/// Throws DataError on bad magic, truncation or CRC mismatch.
std::vector<CheckpointRecord> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

std::vector<CheckpointRecord> records_from(const NamedParams& params);

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointRecord>& records);
std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path);

/// Copies record values into same-named parameters. Every parameter must be
/// present with an identical shape; extra records are ignored.
void load_into(const std::vector<CheckpointRecord>& records, NamedParams& params);

}  // namespace cbodd
