#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "defrec/fs_util.hpp"
#include "defrec/network.hpp"

namespace defrec {

// Model checkpoint layout (little-endian):
//   "DFCK" | version u32 | shape | tensor count u32 |
//   per tensor: name (u32 length + bytes), rows u32, cols u32, rows*cols f32 |
//   trailer: payload size u64, FNV-1a 64 of the payload
// A file whose trailer does not match is rejected, so a truncated write never loads.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_shape(ByteWriter& w, const NetworkShape& shape);
NetworkShape read_shape(ByteReader& r);

void write_model(ByteWriter& w, const Model<float>& model);
Model<float> read_model(ByteReader& r);

/// Append the size + checksum trailer.
void seal(ByteWriter& w);
/// Verify the trailer and return a reader over the payload.
ByteReader unseal(const std::vector<std::uint8_t>& bytes, const std::string& context);

std::vector<std::uint8_t> serialize_checkpoint(const Model<float>& model);
Model<float> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model);
Model<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace defrec
