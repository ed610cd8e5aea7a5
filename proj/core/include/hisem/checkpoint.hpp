#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hisem/params.hpp"
#include "hisem/tensor.hpp"

// Binary checkpoint: "HSEM", u32 version, u32 entry count, then per entry
// u32 name length, name bytes, u32 rank, rank x u64 extents, float64
// payload. Everything little-endian.

namespace hisem {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<Real> values;
};

std::vector<char> encode_checkpoint(const std::vector<CheckpointEntry>& entries);
/// Throws std::runtime_error on a bad magic, unknown version or truncation.
std::vector<CheckpointEntry> decode_checkpoint(const std::vector<char>& bytes);

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

/// Throws std::out_of_range naming the entry when absent.
const CheckpointEntry& find_entry(const std::vector<CheckpointEntry>& entries, const std::string& name);
bool has_entry(const std::vector<CheckpointEntry>& entries, const std::string& name);

std::vector<NamedTensor> to_named_tensors(const std::vector<CheckpointEntry>& entries);

}  // namespace hisem
