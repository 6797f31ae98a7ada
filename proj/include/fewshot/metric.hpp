#pragma once

#include <span>
#include <vector>

#include "fewshot/tensor.hpp"

namespace fewshot {

// Row-wise Euclidean distance: u,v [B,D] -> [B]. The backward rule divides by
// sqrt(sum + 1e-12), which makes the gradient 0 when u == v.
Tensor euclidean_distance(const Tensor& u, const Tensor& v);

// mean_i [ y_i d_i^2 + (1-y_i) max(0, margin - d_i)^2 ], with y = 1 meaning
// "same class". Throws std::invalid_argument for labels outside {0,1} or a
// non-positive margin.
Tensor contrastive_loss(const Tensor& distances, const Tensor& labels, float margin);

struct VerificationDecision {
  float distance;
  float threshold;
  int label_pred;
};

// 1 iff distance < threshold.
int decide(float distance, float threshold);

VerificationDecision make_decision(float distance, float threshold);

struct ScoredPair {
  float distance;
  int label;
};

// Fraction of pairs where decide(distance, threshold) == label. Throws
// std::invalid_argument on an empty list.
double verification_accuracy(std::span<const ScoredPair> pairs, float threshold);

struct Calibration {
  float threshold;
  double accuracy;
};

// Threshold maximizing accuracy among {0} U midpoints of consecutive distinct
// distances U {max + 1e-6}; ties go to the smaller threshold. Throws
// std::invalid_argument unless both labels are present.
Calibration calibrate_threshold(std::span<const ScoredPair> pairs);

}  // namespace fewshot
