#pragma once

#include <cstdint>
#include <filesystem>

#include "nighthaze/network.hpp"

namespace nighthaze::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct LoadedCheckpoint {
    PriorQueryTransformer model;
    std::uint64_t step = 0;
};

/// Binary archive: magic, version, config echo, step counter, then every
/// named parameter tensor (name, rank, dims, raw little-endian doubles).
void save_checkpoint(const PriorQueryTransformer& model, std::uint64_t step, const std::filesystem::path& path);

/// Throws NotFoundError for a missing file and FormatError for anything that
/// does not parse back into the recorded configuration.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace nighthaze::nn
