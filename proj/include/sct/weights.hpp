#pragma once

// SCTW weight files: "SCTW", version u16, tensor count u32, then per tensor a u16-prefixed UTF-8
// name, rank u8, u32 dims and little-endian f32 data; a trailing CRC32 covers everything before
// it. The first tensor, "__config__", encodes the model kind and architecture so loading can
// check every tensor shape before reading its data.

#include "sct/training.hpp"

#include <filesystem>
#include <string>

namespace sct {

inline constexpr std::uint16_t kWeightsVersion = 1;
inline constexpr const char* kConfigTensor = "__config__";

std::string encode_weights(const TrainedModel& model);
TrainedModel decode_weights(const std::string& bytes);

void save_weights(const std::filesystem::path& path, const TrainedModel& model);
TrainedModel load_weights(const std::filesystem::path& path);

std::uint32_t crc32_of(std::string_view bytes);

}  // namespace sct
