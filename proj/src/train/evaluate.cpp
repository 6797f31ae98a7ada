#include "fewshot/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>

#include "fewshot/errors.hpp"

namespace fewshot {

Tensor images_to_batch(const DatasetManifest& manifest, const std::vector<std::string>& ids) {
  const std::size_t h = manifest.target_height, w = manifest.target_width;
  std::vector<float> data(ids.size() * 3 * h * w);
  for (std::size_t n = 0; n < ids.size(); ++n) {
    const Image& img = manifest.record(ids[n]).pixels;
    if (img.height != h || img.width != w) {
      throw DataError("record " + ids[n] + " does not match the manifest target size");
    }
    float* out = data.data() + n * 3 * h * w;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) out[(c * h + y) * w + x] = img.at(y, x, c) / 255.0f;
  }
  return Tensor::from_data({ids.size(), 3, h, w}, std::move(data));
}

std::map<std::string, std::vector<float>> embed_records(const EmbeddingNet& net,
                                                        const DatasetManifest& manifest,
                                                        const std::vector<std::string>& ids,
                                                        std::size_t batch_size) {
  NoGradGuard guard;
  std::vector<std::string> unique;
  std::set<std::string> seen;
  for (const std::string& id : ids) {
    if (seen.insert(id).second) unique.push_back(id);
  }
  std::map<std::string, std::vector<float>> out;
  const std::size_t dim = net.config().embedding_dim;
  for (std::size_t start = 0; start < unique.size(); start += batch_size) {
    const std::size_t end = std::min(unique.size(), start + batch_size);
    const std::vector<std::string> chunk(unique.begin() + static_cast<std::ptrdiff_t>(start),
                                         unique.begin() + static_cast<std::ptrdiff_t>(end));
    const Tensor emb = net.embed(images_to_batch(manifest, chunk));
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      out[chunk[i]].assign(emb.data().begin() + static_cast<std::ptrdiff_t>(i * dim),
                           emb.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
    }
  }
  return out;
}

std::vector<ScoredPair> score_pairs(const EmbeddingNet& net, const DatasetManifest& manifest,
                                    const std::vector<Pair>& pairs, std::size_t batch_size) {
  std::vector<std::string> ids;
  for (const Pair& p : pairs) {
    ids.push_back(p.a);
    ids.push_back(p.b);
  }
  const auto emb = embed_records(net, manifest, ids, batch_size);
  std::vector<ScoredPair> scored;
  scored.reserve(pairs.size());
  const std::size_t dim = net.config().embedding_dim;
  for (const Pair& p : pairs) {
    const std::vector<float>& u = emb.at(p.a);
    const std::vector<float>& v = emb.at(p.b);
    // Same op as training so distances agree bit for bit.
    const Tensor d = euclidean_distance(Tensor::from_data({1, dim}, u), Tensor::from_data({1, dim}, v));
    scored.push_back({d.item(), p.y});
  }
  return scored;
}

double evaluate_verification(const EmbeddingNet& net, const DatasetManifest& manifest,
                             const std::vector<Pair>& pairs, float threshold) {
  if (pairs.empty()) throw std::invalid_argument("evaluate_verification: empty pair list");
  const auto scored = score_pairs(net, manifest, pairs);
  return verification_accuracy(scored, threshold);
}

KwayReport nearest_mean_classification(const std::vector<LabeledEmbedding>& support,
                                       const std::vector<LabeledEmbedding>& queries) {
  if (support.empty() || queries.empty()) {
    throw std::invalid_argument("k-way evaluation needs support and query embeddings");
  }
  std::map<std::string, std::vector<double>> sums;
  std::map<std::string, std::size_t> counts;
  const std::size_t dim = support.front().embedding.size();
  for (const LabeledEmbedding& s : support) {
    auto& sum = sums[s.label];
    sum.resize(dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i) sum[i] += s.embedding[i];
    ++counts[s.label];
  }
  KwayReport report;
  std::size_t correct = 0;
  for (const LabeledEmbedding& q : queries) {
    if (!sums.count(q.label)) throw DataError("query class '" + q.label + "' has no support images");
    ++report.query_counts[q.label];
    std::string best;
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& [label, sum] : sums) {
      double d = 0;
      for (std::size_t i = 0; i < dim; ++i) {
        const double diff = q.embedding[i] - sum[i] / static_cast<double>(counts[label]);
        d += diff * diff;
      }
      // Map order breaks ties by label.
      if (d < best_d) {
        best_d = d;
        best = label;
      }
    }
    if (best == q.label) {
      ++correct;
      ++report.correct_counts[q.label];
    }
  }
  report.accuracy = static_cast<double>(correct) / static_cast<double>(queries.size());
  return report;
}

KwayReport evaluate_kway(const EmbeddingNet& net, const DatasetManifest& support,
                         const DatasetManifest& queries) {
  auto labeled = [&](const DatasetManifest& m) {
    std::vector<std::string> ids;
    for (const ClassEntry& cls : m.classes) ids.insert(ids.end(), cls.ids.begin(), cls.ids.end());
    const auto emb = embed_records(net, m, ids);
    std::vector<LabeledEmbedding> out;
    for (const std::string& id : ids) out.push_back({m.record(id).class_label, emb.at(id)});
    return out;
  };
  return nearest_mean_classification(labeled(support), labeled(queries));
}

RocCurve roc(std::span<const ScoredPair> scored) {
  std::size_t positives = 0;
  for (const ScoredPair& s : scored) {
    if (s.label != 0 && s.label != 1) throw std::invalid_argument("roc: labels must be 0 or 1");
    positives += s.label == 1;
  }
  const std::size_t negatives = scored.size() - positives;
  if (positives == 0 || negatives == 0) throw std::invalid_argument("roc needs both labels");
  std::vector<ScoredPair> sorted(scored.begin(), scored.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const ScoredPair& a, const ScoredPair& b) { return a.distance < b.distance; });
  RocCurve curve;
  curve.points.push_back({0.0, 0.0, -std::numeric_limits<double>::infinity()});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    const float d = sorted[i].distance;
    for (; i < sorted.size() && sorted[i].distance == d; ++i) {
      if (sorted[i].label == 1) {
        ++tp;
      } else {
        ++fp;
      }
    }
    const RocPoint next{static_cast<double>(fp) / static_cast<double>(negatives),
                        static_cast<double>(tp) / static_cast<double>(positives), d};
    const RocPoint& prev = curve.points.back();
    curve.auc += (next.fpr - prev.fpr) * (next.tpr + prev.tpr) / 2.0;
    curve.points.push_back(next);
  }
  return curve;
}

std::string format_roc_csv(const RocCurve& curve) {
  std::string out = "fpr,tpr,threshold\n";
  char buf[96];
  for (const RocPoint& p : curve.points) {
    if (std::isinf(p.threshold)) {
      std::snprintf(buf, sizeof buf, "%.9g,%.9g,-inf\n", p.fpr, p.tpr);
    } else {
      std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g\n", p.fpr, p.tpr, p.threshold);
    }
    out += buf;
  }
  return out;
}

}  // namespace fewshot
