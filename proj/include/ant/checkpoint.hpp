#pragma once

#include <cstdint>
#include <filesystem>

#include "ant/training.hpp"

namespace ant::train {

inline constexpr uint32_t kCheckpointVersion = 1;

// Layout: magic "ANTCKPT1", u32 version, u32 header length, JSON header,
// little-endian parameter blobs (then Adam moments), u32 CRC-32 of everything before it.
template <class T>
void save_checkpoint(const TrainState<T>& state, const std::filesystem::path& path);

// Values stored at another precision are converted.
template <class T>
TrainState<T> load_checkpoint(const std::filesystem::path& path);

model::ModelConfig peek_model_config(const std::filesystem::path& path);

}  // namespace ant::train
