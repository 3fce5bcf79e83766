#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace dbk {

/// On-disk container for model weights and training state.
///
/// Layout (little endian):
///   "DBKC" | u32 version | u64 json_len | json bytes
///   | u32 array_count | per array: u64 name_len, name, u64 count, f32 data
///   | u32 crc32 of all preceding bytes
struct CheckpointBlob {
    std::uint32_t version = 1;
    std::string config_json;
    std::vector<std::pair<std::string, std::vector<float>>> arrays;

    const std::vector<float>* find(const std::string& name) const;
    /// Exact file size this blob serializes to.
    std::uint64_t byte_size() const;
};

void save_checkpoint_blob(const std::filesystem::path& path, const CheckpointBlob& blob);
CheckpointBlob load_checkpoint_blob(const std::filesystem::path& path);

} // namespace dbk
