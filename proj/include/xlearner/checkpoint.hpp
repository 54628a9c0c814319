#pragma once

// Versioned, checksummed container for training state: named float tensors
// plus a JSON header with the config hash, stage tag, step and RNG states.
//
// Layout (little-endian):
//   "XLCKPT01" | u32 schema | u64 header bytes | header JSON |
//   u64 tensor count | { u32 name bytes | name | u32 rank | u64 dims... | f32 data... }* |
//   u32 crc32 of everything before it

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "xlearner/nn.hpp"

namespace xl {

struct CheckpointBundle {
    static constexpr std::uint32_t kSchemaVersion = 1;

    std::uint32_t schema_version = kSchemaVersion;
    std::string config_hash;
    std::string stage;  // phase1 | expanded | squeezed | pruned | ...
    std::uint64_t step = 0;
    std::map<std::string, std::string> rng_states;
    std::string meta = "{}";  // free-form JSON object
    std::map<std::string, Tensor<float>> tensors;

    bool has(const std::string& name) const { return tensors.count(name) != 0; }
    // Throws IoError when the tensor is absent.
    const Tensor<float>& get(const std::string& name) const;
};

// Writes to a temporary sibling and renames, so readers never see partial files.
void save_checkpoint(const CheckpointBundle& bundle, const std::filesystem::path& path);

// Throws IoError (missing/unreadable), ChecksumError (corrupt or truncated) or
// SchemaError (unsupported version). Nothing is returned on failure.
CheckpointBundle load_checkpoint(const std::filesystem::path& path);

// Throws ConfigMismatchError unless the hashes match or `force` is set.
void check_config_hash(const CheckpointBundle& bundle, const std::string& expected_hash, bool force);

// Parameters and buffers of a list under "<prefix><name>".
void store_parameters(CheckpointBundle& bundle, const nn::ParamList<float>& list, const std::string& prefix = "");
// Copies stored values into the list; missing names or shape mismatches throw IoError.
void load_parameters(const CheckpointBundle& bundle, nn::ParamList<float>& list, const std::string& prefix = "");

}  // namespace xl
