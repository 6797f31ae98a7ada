#include "fewshot/metric.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "fewshot/errors.hpp"
#include "fewshot/kernels.hpp"

namespace fewshot {

Tensor euclidean_distance(const Tensor& u, const Tensor& v) {
  if (u.rank() != 2 || u.shape() != v.shape()) {
    throw ShapeError("euclidean_distance: expected matching [B,D] inputs, got " +
                     shape_to_string(u.shape()) + " and " + shape_to_string(v.shape()));
  }
  const std::size_t rows = u.dim(0), width = u.dim(1);
  const auto& k = kernels::active();
  std::vector<float> squared(rows), out(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    squared[i] = k.squared_distance(u.data().data() + i * width, v.data().data() + i * width, width);
    out[i] = std::sqrt(squared[i]);
  }
  BackwardFn rule = [u, v, squared, rows, width](std::span<const float> grad) {
    const bool gu = AutogradAccess::wants_grad(u);
    const bool gv = AutogradAccess::wants_grad(v);
    std::span<float> du, dv;
    if (gu) du = AutogradAccess::grad_of(u);
    if (gv) dv = AutogradAccess::grad_of(v);
    for (std::size_t i = 0; i < rows; ++i) {
      const float coeff = grad[i] / std::sqrt(squared[i] + 1e-12f);
      for (std::size_t j = 0; j < width; ++j) {
        const std::size_t q = i * width + j;
        const float diff = u.at(q) - v.at(q);
        if (gu) du[q] += coeff * diff;
        if (gv) dv[q] -= coeff * diff;
      }
    }
  };
  return AutogradAccess::make_result("euclidean_distance", {rows}, std::move(out), {u, v},
                                     std::move(rule));
}

Tensor contrastive_loss(const Tensor& distances, const Tensor& labels, float margin) {
  if (!(margin > 0.0f)) throw std::invalid_argument("contrastive_loss: margin must be positive");
  if (distances.rank() != 1 || labels.shape() != distances.shape()) {
    throw ShapeError("contrastive_loss: expected matching [B] inputs, got " +
                     shape_to_string(distances.shape()) + " and " +
                     shape_to_string(labels.shape()));
  }
  const std::size_t n = distances.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const float y = labels.at(i);
    if (y != 0.0f && y != 1.0f) {
      throw std::invalid_argument("contrastive_loss: label " + std::to_string(y) + " at index " +
                                  std::to_string(i) + " is not binary");
    }
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const float d = distances.at(i);
    if (labels.at(i) == 1.0f) {
      total += static_cast<double>(d) * d;
    } else {
      const float gap = std::max(0.0f, margin - d);
      total += static_cast<double>(gap) * gap;
    }
  }
  const float loss = static_cast<float>(total / static_cast<double>(n));
  BackwardFn rule = [distances, labels, margin, n](std::span<const float> grad) {
    auto gd = AutogradAccess::grad_of(distances);
    const float scale = 2.0f * grad[0] / static_cast<float>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const float d = distances.at(i);
      if (labels.at(i) == 1.0f) {
        gd[i] += scale * d;
      } else {
        gd[i] -= scale * std::max(0.0f, margin - d);
      }
    }
  };
  return AutogradAccess::make_result("contrastive_loss", {}, {loss}, {distances, labels},
                                     std::move(rule));
}

int decide(float distance, float threshold) { return distance < threshold ? 1 : 0; }

VerificationDecision make_decision(float distance, float threshold) {
  return {distance, threshold, decide(distance, threshold)};
}

double verification_accuracy(std::span<const ScoredPair> pairs, float threshold) {
  if (pairs.empty()) throw std::invalid_argument("verification_accuracy: empty pair list");
  std::size_t correct = 0;
  for (const ScoredPair& p : pairs) correct += decide(p.distance, threshold) == p.label ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

Calibration calibrate_threshold(std::span<const ScoredPair> pairs) {
  std::size_t positives = 0;
  for (const ScoredPair& p : pairs) positives += p.label == 1 ? 1 : 0;
  if (positives == 0 || positives == pairs.size()) {
    throw std::invalid_argument("calibrate_threshold: validation set must contain both labels");
  }
  std::vector<ScoredPair> sorted(pairs.begin(), pairs.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const ScoredPair& a, const ScoredPair& b) { return a.distance < b.distance; });
  const std::size_t n = sorted.size();
  const std::size_t negatives = n - positives;

  // With threshold t, pairs with d < t are predicted 1. At t = 0 nothing is
  // (distances are non-negative), so every negative is correct.
  Calibration best{0.0f, static_cast<double>(negatives) / static_cast<double>(n)};
  std::size_t correct = negatives;
  std::size_t i = 0;
  while (i < n) {
    // Move the whole group sharing this distance below the threshold.
    const float d = sorted[i].distance;
    while (i < n && sorted[i].distance == d) {
      if (sorted[i].label == 1) {
        ++correct;
      } else {
        --correct;
      }
      ++i;
    }
    float threshold = i < n ? d + (sorted[i].distance - d) / 2.0f
                            : d + std::max(1e-6f, std::fabs(d) * 1e-6f);
    // Adjacent floats: the midpoint can round back onto d.
    if (threshold <= d) threshold = i < n ? sorted[i].distance : std::nextafter(d, INFINITY);
    const double acc = static_cast<double>(correct) / static_cast<double>(n);
    if (acc > best.accuracy) best = {threshold, acc};
  }
  return best;
}

}  // namespace fewshot
