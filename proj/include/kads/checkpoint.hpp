#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "kads/params.hpp"

namespace kads {

inline constexpr int kCheckpointFormatVersion = 1;

// On-disk layout: 8-byte magic "KADSCKPT", little-endian u64 manifest length,
// the JSON manifest, then little-endian float64 blocks. Each tensor occupies
// value, first moment and second moment consecutively at its manifest offset.
struct Checkpoint {
  std::uint64_t vocab_hash = 0;
  std::uint64_t config_hash = 0;
  nlohmann::json extra = nlohmann::json::object();
  std::map<std::string, ParamStore> stores;
};

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

// Throws ParseError for malformed or truncated files (nothing is returned
// partially) and IncompatibleError on a format-version or hash mismatch.
Checkpoint read_checkpoint(const std::filesystem::path& path,
                           std::optional<std::uint64_t> expected_vocab_hash = std::nullopt,
                           std::optional<std::uint64_t> expected_config_hash = std::nullopt);

// Single-store convenience wrappers.
void save_checkpoint(const ParamStore& store, const std::filesystem::path& path, std::uint64_t vocab_hash = 0,
                     std::uint64_t config_hash = 0);
ParamStore load_checkpoint(const std::filesystem::path& path,
                           std::optional<std::uint64_t> expected_vocab_hash = std::nullopt,
                           std::optional<std::uint64_t> expected_config_hash = std::nullopt);

std::string hash_hex(std::uint64_t h);

}  // namespace kads
