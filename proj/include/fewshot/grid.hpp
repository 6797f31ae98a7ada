#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fewshot/dataset.hpp"
#include "fewshot/embedding_net.hpp"
#include "fewshot/evaluate.hpp"
#include "fewshot/train.hpp"

namespace fewshot {

struct GridConfig {
  std::vector<std::size_t> ways{10, 25, 55};
  std::vector<std::size_t> shots{1, 5, 20};
  std::array<double, 3> fractions{0.6, 0.2, 0.2};
  std::size_t pairs_per_image = 1;
  std::size_t eval_pairs_per_image = 1;
  TrainConfig train;  // train.seed is ignored; each cell derives its own
  // Defaults to EmbeddingNetConfig::for_input(manifest target size).
  std::optional<EmbeddingNetConfig> net;
  std::size_t jobs = 1;
  std::uint64_t seed = 0;
};

struct EvalReport {
  std::size_t k_way = 0;
  std::size_t n_shot = 0;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  double auc = 0.0;
  float threshold = 0.0f;
  std::uint64_t seed = 0;
  double kway_accuracy = 0.0;
  std::size_t test_pairs = 0;
  std::map<std::string, std::size_t> per_class_counts;  // k-way test queries
  RocCurve roc_curve;
  std::vector<EpochRecord> log;
};

struct GridResult {
  std::vector<EvalReport> reports;   // ways-major, in the order given
  std::vector<std::string> skipped;  // "way=W shot=S: reason"
};

using CellCallback = std::function<void(const std::string&)>;

// Per cell: select_ways, split by source, balanced training pairs for the
// shot count, train, then evaluate the best-validation network on the test
// partition with the validation threshold. Infeasible cells are skipped and
// reported.
GridResult run_experiment_grid(const DatasetManifest& manifest, const GridConfig& config,
                               const CellCallback& progress = {});

std::uint64_t cell_seed(std::uint64_t seed, std::size_t way, std::size_t shot);

// Columns way, shot, val_acc, test_acc, auc, threshold, seed.
std::string format_grid_tsv(const GridResult& result);
// Per-cell counts, k-way accuracy and skip reasons.
std::string format_grid_report_json(const GridResult& result);
// results.tsv, report.json, roc_<way>x<shot>.csv, log_<way>x<shot>.csv.
void write_grid_outputs(const GridResult& result, const std::filesystem::path& out_dir);

}  // namespace fewshot
