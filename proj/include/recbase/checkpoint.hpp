#pragma once

#include <cstdint>
#include <filesystem>

#include "json.hpp"
#include "recbase/optim.hpp"

namespace recbase::nn {

inline constexpr uint8_t kCheckpointVersion = 1;

/// Self-describing parameter container.
///
/// Layout (little-endian): version byte, "RBCK", u64 metadata length,
/// metadata JSON, u64 optimizer step, u64 parameter count, then per
/// parameter: u32 name length, name, u8 trainable, u32 rank, u64 dims,
/// float32 values, float32 first moments, float32 second moments.
struct Checkpoint {
  nlohmann::json meta;
  ParameterStore store;
};

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store,
                     const nlohmann::json& meta);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Serialized bytes, used for hashing and in-memory round trips.
std::string serialize_checkpoint(const ParameterStore& store, const nlohmann::json& meta);
Checkpoint deserialize_checkpoint(const std::string& bytes);

/// Copies values and moments from `src` into `dst`; names and shapes must match.
void assign_parameters(ParameterStore& dst, const ParameterStore& src);

}  // namespace recbase::nn
