#include "fewshot/train.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "fewshot/errors.hpp"
#include "fewshot/evaluate.hpp"
#include "fewshot/metric.hpp"
#include "fewshot/ops.hpp"
#include "fewshot/optim.hpp"

namespace fewshot {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  if (!(lr >= 0.0f) || !std::isfinite(lr)) throw std::invalid_argument("lr must be finite and >= 0");
  if (!(rho > 0.0f && rho < 1.0f)) throw std::invalid_argument("rho must be in (0,1)");
  if (!(margin > 0.0f)) throw std::invalid_argument("margin must be positive");
  if (early_stop) {
    if (early_stop->patience < 1) throw std::invalid_argument("early stop patience must be at least 1");
    if (early_stop->metric != "val_acc" && early_stop->metric != "train_loss") {
      throw std::invalid_argument("early stop metric must be val_acc or train_loss");
    }
  }
}

namespace {

void check_pairs(const DatasetManifest& images, const std::vector<Pair>& pairs, const char* what) {
  if (pairs.empty()) throw DataError(std::string(what) + " pairs are empty");
  std::size_t positives = 0;
  for (const Pair& p : pairs) {
    images.record(p.a);
    images.record(p.b);
    positives += p.y == 1;
  }
  if (positives == 0 || positives == pairs.size()) {
    throw DataError(std::string(what) + " pairs need both labels");
  }
}

std::string format_float(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

double max_abs_grad(const EmbeddingNet& net) {
  double m = 0.0;
  for (const Tensor& p : net.parameters()) {
    if (!p.has_grad()) continue;
    for (const float g : p.grad()) m = std::max(m, static_cast<double>(std::fabs(g)));
  }
  return m;
}

std::size_t meta_size(const Checkpoint& c, const char* key, std::size_t fallback) {
  const auto it = c.metadata.find(key);
  return it == c.metadata.end() ? fallback : std::stoull(it->second);
}

double meta_double(const Checkpoint& c, const char* key, double fallback) {
  const auto it = c.metadata.find(key);
  return it == c.metadata.end() ? fallback : std::stod(it->second);
}

}  // namespace

TrainResult train(EmbeddingNet& net, const DatasetManifest& images, const std::vector<Pair>& train_pairs,
                  const std::vector<Pair>& val_pairs, const TrainConfig& config,
                  const Checkpoint* resume_from, const EpochCallback& on_epoch) {
  config.validate();
  check_pairs(images, train_pairs, "training");
  check_pairs(images, val_pairs, "validation");

  RmsProp optimizer(net.parameters(), {config.lr, config.rho, 1e-8f});
  std::size_t first_epoch = 1;
  double best_val = -1.0, best_loss = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0, since_best = 0;
  if (resume_from != nullptr) {
    optimizer.load_state(restore_optimizer_state(*resume_from, net));
    first_epoch = resume_from->epoch + 1;
    best_val = meta_double(*resume_from, "best_val_acc", -1.0);
    best_loss = meta_double(*resume_from, "best_train_loss", best_loss);
    best_epoch = meta_size(*resume_from, "best_epoch", 0);
    since_best = meta_size(*resume_from, "epochs_since_best", 0);
  }

  TrainResult result;
  std::vector<float> labels(train_pairs.size());
  for (std::size_t i = 0; i < train_pairs.size(); ++i) labels[i] = static_cast<float>(train_pairs[i].y);

  auto snapshot = [&](std::size_t epoch, const EpochRecord& rec, bool with_optimizer) {
    Checkpoint c = make_checkpoint(net, with_optimizer ? &optimizer : nullptr, epoch, config.seed);
    c.metadata["threshold"] = format_float(rec.threshold);
    c.metadata["val_acc"] = format_float(rec.val_acc);
    return c;
  };

  for (std::size_t epoch = first_epoch; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order(train_pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<std::string> a_ids, b_ids;
      std::vector<float> y;
      for (std::size_t i = start; i < end; ++i) {
        a_ids.push_back(train_pairs[order[i]].a);
        b_ids.push_back(train_pairs[order[i]].b);
        y.push_back(labels[order[i]]);
      }
      const SiameseOutput out =
          siamese_forward_full(net, images_to_batch(images, a_ids), images_to_batch(images, b_ids));
      const std::size_t rows = y.size();
      const Tensor contrastive =
          contrastive_loss(out.distances, Tensor::from_data({rows}, std::move(y)), config.margin);
      const Tensor total = ops::add(contrastive, l1_penalty(net, out.hidden));
      backward(total);
      if (!std::isfinite(total.item())) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "non-finite loss at epoch %zu batch %zu (max |grad| = %g)", epoch,
                      batch_index, max_abs_grad(net));
        throw NumericError(buf);
      }
      optimizer.step();
      loss_sum += static_cast<double>(contrastive.item()) * static_cast<double>(end - start);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_pairs.size());
    const auto scored = score_pairs(net, images, val_pairs);
    const Calibration cal = calibrate_threshold(scored);
    rec.val_acc = cal.accuracy;
    rec.threshold = cal.threshold;
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);

    const bool by_loss = config.early_stop && config.early_stop->metric == "train_loss";
    const bool improved_val = rec.val_acc > best_val;
    if (improved_val) {
      best_val = rec.val_acc;
      best_epoch = epoch;
      result.best = snapshot(epoch, rec, false);
    }
    const bool improved = by_loss ? rec.train_loss < best_loss : improved_val;
    if (rec.train_loss < best_loss) best_loss = rec.train_loss;
    since_best = improved ? 0 : since_best + 1;

    result.last = snapshot(epoch, rec, true);
    result.last.metadata["best_val_acc"] = format_float(best_val);
    result.last.metadata["best_train_loss"] = format_float(best_loss);
    result.last.metadata["best_epoch"] = std::to_string(best_epoch);
    result.last.metadata["epochs_since_best"] = std::to_string(since_best);
    if (result.best) {
      result.best->metadata["best_val_acc"] = format_float(best_val);
      result.best->metadata["best_epoch"] = std::to_string(best_epoch);
    }
    if (config.early_stop && since_best >= config.early_stop->patience) {
      result.stopped_early = true;
      break;
    }
  }
  if (result.log.empty()) {
    // Resumed at or past the final epoch: nothing to do.
    result.last = *resume_from;
  }
  return result;
}

std::string format_training_log(const std::vector<EpochRecord>& log) {
  std::string out = "epoch,train_loss,val_acc\n";
  char buf[96];
  for (const EpochRecord& r : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", r.epoch, r.train_loss, r.val_acc);
    out += buf;
  }
  return out;
}

}  // namespace fewshot
