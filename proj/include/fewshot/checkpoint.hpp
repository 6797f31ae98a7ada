#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fewshot/embedding_net.hpp"
#include "fewshot/optim.hpp"

namespace fewshot {

// Binary layout, all integers little-endian:
//   magic "FSSIAMCK" | u32 version | u32 text length | canonical key-sorted
//   text (network config plus checkpoint.* metadata) | tensor records
//   (u32 name length, name, u32 rank, u32 dims..., float32 payload) |
//   u32 CRC-32 of every preceding byte.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  EmbeddingNetConfig config;
  std::vector<NamedTensor> parameters;       // network weights
  std::vector<NamedTensor> optimizer_state;  // "rmsprop.<param>" mean squares
  std::uint64_t epoch = 0;
  std::uint64_t seed = 0;
  // Free-form single-line values, e.g. the calibrated threshold.
  std::map<std::string, std::string> metadata;
};

Checkpoint make_checkpoint(const EmbeddingNet& net, const RmsProp* optimizer, std::uint64_t epoch,
                           std::uint64_t seed);

std::string encode_checkpoint(const Checkpoint& checkpoint);
// Throws CheckpointError (kBadMagic, kVersion, kCorrupt).
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Rebuilds the network. If expected is given and differs, throws
// CheckpointError(kConfigMismatch).
EmbeddingNet restore_network(const Checkpoint& checkpoint,
                             const std::optional<EmbeddingNetConfig>& expected = std::nullopt);

// Optimizer state in parameter order. Throws CheckpointError(kMissingTensor)
// if the checkpoint carries no state for some parameter.
std::vector<Tensor> restore_optimizer_state(const Checkpoint& checkpoint, const EmbeddingNet& net);

void save_network(const EmbeddingNet& net, const std::filesystem::path& path);
EmbeddingNet load_network(const std::filesystem::path& path,
                          const std::optional<EmbeddingNetConfig>& expected = std::nullopt);

}  // namespace fewshot
