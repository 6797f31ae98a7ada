#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fewshot/checkpoint.hpp"
#include "fewshot/dataset.hpp"
#include "fewshot/embedding_net.hpp"
#include "fewshot/pairs.hpp"

namespace fewshot {

struct EarlyStop {
  std::size_t patience = 10;
  // "val_acc" (stop when it stops rising) or "train_loss" (when it stops
  // falling).
  std::string metric = "val_acc";
};

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  float lr = 1e-4f;
  float rho = 0.7f;
  float margin = 1.0f;
  std::uint64_t seed = 0;
  std::optional<EarlyStop> early_stop;

  // Throws std::invalid_argument. lr = 0 is allowed and trains nothing.
  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;  // mean contrastive loss over the epoch's pairs
  double val_acc = 0.0;
  float threshold = 0.0f;  // calibrated on the validation pairs
  bool operator==(const EpochRecord&) const = default;
};

struct TrainResult {
  // Best validation accuracy seen in this run; unset if a resumed run never
  // beat the best recorded in its checkpoint.
  std::optional<Checkpoint> best;
  Checkpoint last;  // includes optimizer state, for resuming
  std::vector<EpochRecord> log;
  bool stopped_early = false;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Trains net in place on id pairs resolved through `images`. Each epoch
// shuffles with derive_seed(seed, epoch), so a resumed run replays exactly.
// Checkpoint metadata carries threshold, val_acc, best_val_acc, best_epoch.
// Throws NumericError on a non-finite loss and DataError on bad pairs.
TrainResult train(EmbeddingNet& net, const DatasetManifest& images, const std::vector<Pair>& train_pairs,
                  const std::vector<Pair>& val_pairs, const TrainConfig& config,
                  const Checkpoint* resume_from = nullptr, const EpochCallback& on_epoch = {});

// "epoch,train_loss,val_acc" header plus one row per epoch.
std::string format_training_log(const std::vector<EpochRecord>& log);

}  // namespace fewshot
