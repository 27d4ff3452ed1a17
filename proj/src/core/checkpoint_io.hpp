#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dit.hpp"
#include "flow_training.hpp"
#include "json.hpp"

namespace ras {

// Single-file checkpoint container. Byte layout (all integers little-endian):
//
//   0   char[4]  magic "RASF"
//   4   u32      format version (1)
//   8   u32      config length N
//   12  u8[N]    config blob, UTF-8 JSON, stored verbatim
//       u32      tensor count
//       per tensor:
//         u16 name length, name bytes, u8 dtype (1 = f32), u8 ndim,
//         u64 dims[ndim], u64 payload offset (from file start), u64 byte size
//       u64      total file size
//   payload: each tensor's little-endian f32 data at a 64-byte aligned offset,
//   zero padding in between.
inline constexpr char kCheckpointMagic[4] = {'R', 'A', 'S', 'F'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::size_t kPayloadAlignment = 64;

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct Checkpoint {
    DitModel model;
    std::string config_blob;  // verbatim JSON; always carries a "model" object
};

// Builds the default blob {"model": ...} when `config_blob` is empty; a
// non-empty blob must be JSON whose "model" entry matches the model.
std::vector<std::uint8_t> encode_checkpoint(const DitModel& model, const std::string& config_blob = {});
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const DitModel& model, const std::string& path, const std::string& config_blob = {});
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ras
