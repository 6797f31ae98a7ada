#pragma once

#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fewshot/dataset.hpp"
#include "fewshot/embedding_net.hpp"
#include "fewshot/metric.hpp"
#include "fewshot/pairs.hpp"

namespace fewshot {

// [B,3,H,W] batch scaled to [0,1].
Tensor images_to_batch(const DatasetManifest& manifest, const std::vector<std::string>& ids);

// Embeddings for the given ids, computed without recording gradients.
std::map<std::string, std::vector<float>> embed_records(const EmbeddingNet& net,
                                                        const DatasetManifest& manifest,
                                                        const std::vector<std::string>& ids,
                                                        std::size_t batch_size = 64);

// Each distinct image is embedded once.
std::vector<ScoredPair> score_pairs(const EmbeddingNet& net, const DatasetManifest& manifest,
                                    const std::vector<Pair>& pairs, std::size_t batch_size = 64);

// Mean of decide(d, threshold) == y. Throws std::invalid_argument on no pairs.
double evaluate_verification(const EmbeddingNet& net, const DatasetManifest& manifest,
                             const std::vector<Pair>& pairs, float threshold);

struct LabeledEmbedding {
  std::string label;
  std::vector<float> embedding;
};

struct KwayReport {
  double accuracy = 0.0;
  std::map<std::string, std::size_t> query_counts;
  std::map<std::string, std::size_t> correct_counts;
};

// Nearest class-mean of the support embeddings. Throws DataError when a
// query's class has no support.
KwayReport nearest_mean_classification(const std::vector<LabeledEmbedding>& support,
                                       const std::vector<LabeledEmbedding>& queries);

KwayReport evaluate_kway(const EmbeddingNet& net, const DatasetManifest& support,
                         const DatasetManifest& queries);

struct RocPoint {
  double fpr;
  double tpr;
  // Pairs with distance <= threshold are called positive; -inf for (0,0).
  double threshold;
};

struct RocCurve {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

// One point per distinct distance, from (0,0) to (1,1), trapezoidal AUC.
// Throws std::invalid_argument unless both labels are present.
RocCurve roc(std::span<const ScoredPair> scored);

// "fpr,tpr,threshold" rows.
std::string format_roc_csv(const RocCurve& curve);

}  // namespace fewshot
