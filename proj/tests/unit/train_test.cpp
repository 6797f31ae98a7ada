#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "../support/datasets.hpp"
#include "../support/manifests.hpp"
#include "../support/oracles.hpp"
#include "../support/tempdir.hpp"
#include "fewshot/checkpoint.hpp"
#include "fewshot/errors.hpp"
#include "fewshot/evaluate.hpp"
#include "fewshot/grid.hpp"
#include "fewshot/pairs.hpp"
#include "fewshot/rng.hpp"
#include "fewshot/train.hpp"

namespace fewshot {
namespace {

using testing::rendered_dataset;
using testing::small_net_config;

const DatasetManifest& small_dataset() {
  static const DatasetManifest m = rendered_dataset(4, 6, 16, 11);
  return m;
}

std::vector<Pair> small_pairs(const DatasetManifest& m, std::uint64_t seed) {
  return generate_balanced_pairs(m, {m.classes.size(), 6, 1, seed, std::nullopt}).pairs;
}

TrainConfig fast_config(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 8;
  c.lr = 1e-3f;
  c.seed = 3;
  return c;
}

std::vector<std::vector<float>> snapshot(const EmbeddingNet& net) {
  std::vector<std::vector<float>> out;
  for (const Tensor& p : net.parameters()) out.emplace_back(p.data().begin(), p.data().end());
  return out;
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.epochs = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.lr = -1.0f;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.margin = 0.0f;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Train, ZeroLearningRateLeavesParametersUntouched) {
  const auto& m = small_dataset();
  EmbeddingNet net = EmbeddingNet::build(small_net_config(), 1);
  const auto before = snapshot(net);
  TrainConfig c = fast_config(3);
  c.lr = 0.0f;
  const TrainResult r = train(net, m, small_pairs(m, 1), small_pairs(m, 2), c);
  EXPECT_EQ(snapshot(net), before);
  EXPECT_EQ(r.log.size(), 3u);
}

TEST(Train, OverfitsTwoClassesOfFour) {
  const DatasetManifest m = rendered_dataset(2, 4, 32, 3);
  const auto pairs = generate_balanced_pairs(m, {2, 4, 1, 1, std::nullopt}).pairs;
  ASSERT_EQ(pairs.size(), 16u);
  EmbeddingNet net = EmbeddingNet::build(EmbeddingNetConfig::for_input(32, 32), 5);
  TrainConfig c;
  c.epochs = 200;
  c.seed = 2;
  const TrainResult r = train(net, m, pairs, pairs, c);
  ASSERT_EQ(r.log.size(), 200u);
  EXPECT_LT(r.log.back().train_loss, 0.05);
  EXPECT_EQ(r.log.back().val_acc, 1.0);
  EXPECT_EQ(evaluate_verification(net, m, pairs, r.log.back().threshold), 1.0);
}

TEST(Train, SameConfigSameLogAndCheckpoint) {
  const auto& m = small_dataset();
  const auto pairs = small_pairs(m, 1), val = small_pairs(m, 2);
  EmbeddingNet a = EmbeddingNet::build(small_net_config(), 4);
  EmbeddingNet b = EmbeddingNet::build(small_net_config(), 4);
  const TrainResult ra = train(a, m, pairs, val, fast_config(4));
  const TrainResult rb = train(b, m, pairs, val, fast_config(4));
  EXPECT_EQ(ra.log, rb.log);
  EXPECT_EQ(format_training_log(ra.log), format_training_log(rb.log));
  EXPECT_EQ(encode_checkpoint(ra.last), encode_checkpoint(rb.last));
  EXPECT_EQ(snapshot(a), snapshot(b));
}

TEST(Train, ResumeReproducesLogTail) {
  const auto& m = small_dataset();
  const auto pairs = small_pairs(m, 1), val = small_pairs(m, 2);
  EmbeddingNet full = EmbeddingNet::build(small_net_config(), 4);
  const TrainResult whole = train(full, m, pairs, val, fast_config(5));

  EmbeddingNet first = EmbeddingNet::build(small_net_config(), 4);
  const TrainResult head = train(first, m, pairs, val, fast_config(2));
  testing::TempDir dir("resume");
  save_checkpoint(head.last, dir / "last.ckpt");
  const Checkpoint loaded = load_checkpoint(dir / "last.ckpt");
  EmbeddingNet resumed = restore_network(loaded);
  const TrainResult tail = train(resumed, m, pairs, val, fast_config(5), &loaded);

  ASSERT_EQ(tail.log.size(), 3u);
  EXPECT_EQ(tail.log.front().epoch, 3u);
  EXPECT_TRUE(std::equal(tail.log.begin(), tail.log.end(), whole.log.begin() + 2));
  EXPECT_EQ(snapshot(resumed), snapshot(full));
}

TEST(Train, BestCheckpointCarriesThreshold) {
  const auto& m = small_dataset();
  EmbeddingNet net = EmbeddingNet::build(small_net_config(), 4);
  const TrainResult r = train(net, m, small_pairs(m, 1), small_pairs(m, 2), fast_config(3));
  ASSERT_TRUE(r.best.has_value());
  const double best_acc = std::stod(r.best->metadata.at("val_acc"));
  double max_acc = 0.0;
  for (const auto& e : r.log) max_acc = std::max(max_acc, e.val_acc);
  EXPECT_NEAR(best_acc, max_acc, 1e-6);
  EXPECT_GT(std::stof(r.best->metadata.at("threshold")), 0.0f);
  EXPECT_GE(r.best->epoch, 1u);
}

TEST(Train, EarlyStopAfterPatience) {
  const auto& m = small_dataset();
  EmbeddingNet net = EmbeddingNet::build(small_net_config(), 4);
  TrainConfig c = fast_config(20);
  c.lr = 0.0f;  // val accuracy never improves
  c.early_stop = EarlyStop{2, "val_acc"};
  const TrainResult r = train(net, m, small_pairs(m, 1), small_pairs(m, 2), c);
  EXPECT_TRUE(r.stopped_early);
  EXPECT_EQ(r.log.size(), 3u);
}

TEST(Train, NonFiniteLossIsANumericError) {
  const auto& m = small_dataset();
  EmbeddingNet net = EmbeddingNet::build(small_net_config(), 4);
  // relu maps NaN to 0, so overflow the output layer instead.
  std::ranges::fill(net.parameters()[net.parameters().size() - 2].mutable_data(), 1e30f);
  try {
    train(net, m, small_pairs(m, 1), small_pairs(m, 2), fast_config(2));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("epoch 1"), std::string::npos) << what;
    EXPECT_NE(what.find("batch"), std::string::npos) << what;
  }
}

TEST(Train, UnknownImageIsADataError) {
  const auto& m = small_dataset();
  EmbeddingNet net = EmbeddingNet::build(small_net_config(), 4);
  const std::vector<Pair> bad{{"nope", m.classes[0].ids[0], 1}, {m.classes[0].ids[0], m.classes[1].ids[0], 0}};
  EXPECT_THROW(train(net, m, bad, small_pairs(m, 2), fast_config(1)), DataError);
}

TEST(Train, LogFormat) {
  const std::vector<EpochRecord> log{{1, 0.5, 0.75, 0.1f}, {2, 0.25, 1.0, 0.2f}};
  EXPECT_EQ(format_training_log(log), "epoch,train_loss,val_acc\n1,0.5,0.75\n2,0.25,1\n");
}

// Embedding matrices built by hand.

std::vector<LabeledEmbedding> one_hot_set(std::size_t k, std::size_t per_class, float jitter, Rng& rng) {
  std::vector<LabeledEmbedding> out;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      LabeledEmbedding e{"c" + std::to_string(c), std::vector<float>(k, 0.0f)};
      e.embedding[c] = 1.0f;
      for (float& v : e.embedding) v += jitter * static_cast<float>(rng.normal());
      out.push_back(std::move(e));
    }
  }
  return out;
}

std::vector<LabeledEmbedding> random_set(std::size_t k, std::size_t per_class, std::size_t dim, Rng& rng) {
  std::vector<LabeledEmbedding> out;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      LabeledEmbedding e{"c" + std::to_string(c), std::vector<float>(dim)};
      for (float& v : e.embedding) v = static_cast<float>(rng.normal());
      out.push_back(std::move(e));
    }
  }
  return out;
}

float distance(const std::vector<float>& a, const std::vector<float>& b) {
  return static_cast<float>(oracle::euclidean(a.data(), b.data(), a.size()));
}

TEST(Verification, RandomEmbeddingsAreAtChance) {
  Rng rng(21);
  const auto embeddings = random_set(10, 100, 16, rng);
  std::vector<ScoredPair> scored;
  while (scored.size() < 2000) {
    const auto& a = embeddings[rng.below(embeddings.size())];
    const auto& b = embeddings[rng.below(embeddings.size())];
    const int y = a.label == b.label ? 1 : 0;
    const std::size_t positives = std::count_if(scored.begin(), scored.end(), [](auto& s) { return s.label == 1; });
    if ((y == 1 && positives >= 1000) || (y == 0 && scored.size() - positives >= 1000)) continue;
    scored.push_back({distance(a.embedding, b.embedding), y});
  }
  // The median distance is the least favorable fixed threshold for a chance test.
  std::vector<float> d;
  for (const auto& s : scored) d.push_back(s.distance);
  std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
  EXPECT_NEAR(verification_accuracy(scored, d[d.size() / 2]), 0.5, 0.05);
}

TEST(Verification, OneHotEmbeddingsAreSeparable) {
  Rng rng(22);
  const auto embeddings = one_hot_set(5, 10, 0.0f, rng);
  std::vector<ScoredPair> scored;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    for (std::size_t j = i + 1; j < embeddings.size(); ++j) {
      scored.push_back({distance(embeddings[i].embedding, embeddings[j].embedding),
                        embeddings[i].label == embeddings[j].label ? 1 : 0});
    }
  }
  EXPECT_EQ(verification_accuracy(scored, 0.5f), 1.0);
}

void zero_parameters(EmbeddingNet& net) {
  for (Tensor& p : net.parameters()) std::ranges::fill(p.mutable_data(), 0.0f);
}

TEST(Verification, ZeroNetPredictsAllPositive) {
  const auto& m = small_dataset();
  EmbeddingNet net = EmbeddingNet::build(small_net_config(), 1);
  zero_parameters(net);
  const auto pairs = small_pairs(m, 5);
  EXPECT_EQ(evaluate_verification(net, m, pairs, 0.5f), 0.5);
  for (const auto& s : score_pairs(net, m, pairs)) EXPECT_EQ(s.distance, 0.0f);
}

TEST(Verification, PermutationInvariantAndErrors) {
  const auto& m = small_dataset();
  const EmbeddingNet net = EmbeddingNet::build(small_net_config(), 7);
  auto pairs = small_pairs(m, 5);
  const auto scored = score_pairs(net, m, pairs);
  const float t = calibrate_threshold(scored).threshold;
  const double acc = evaluate_verification(net, m, pairs, t);
  Rng g(4);
  g.shuffle(pairs);
  EXPECT_EQ(evaluate_verification(net, m, pairs, t), acc);
  EXPECT_THROW(evaluate_verification(net, m, {}, t), std::invalid_argument);
}

TEST(Verification, ScoresMatchStandaloneEmbeddings) {
  const auto& m = small_dataset();
  const EmbeddingNet net = EmbeddingNet::build(small_net_config(), 7);
  const auto pairs = small_pairs(m, 6);
  const auto scored = score_pairs(net, m, pairs, 5);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Tensor ea = net.embed(images_to_batch(m, {pairs[i].a}));
    const Tensor eb = net.embed(images_to_batch(m, {pairs[i].b}));
    EXPECT_NEAR(scored[i].distance, oracle::euclidean(ea.data().data(), eb.data().data(), ea.data().size()), 1e-5);
    EXPECT_EQ(scored[i].label, pairs[i].y);
  }
}

TEST(Kway, QueryEqualToSupportIsCorrect) {
  Rng rng(30);
  const auto support = random_set(6, 1, 8, rng);
  const KwayReport r = nearest_mean_classification(support, support);
  EXPECT_EQ(r.accuracy, 1.0);
  for (const auto& [label, n] : r.query_counts) {
    EXPECT_EQ(n, 1u);
    EXPECT_EQ(r.correct_counts.at(label), 1u);
  }
}

TEST(Kway, OneHotIsPerfect) {
  Rng rng(31);
  const auto support = one_hot_set(10, 5, 0.05f, rng);
  const auto queries = one_hot_set(10, 20, 0.05f, rng);
  EXPECT_EQ(nearest_mean_classification(support, queries).accuracy, 1.0);
}

TEST(Kway, RandomIsAtChance) {
  Rng rng(32);
  const auto support = random_set(10, 5, 16, rng);
  const auto queries = random_set(10, 100, 16, rng);
  const KwayReport r = nearest_mean_classification(support, queries);
  EXPECT_NEAR(r.accuracy, 0.1, 0.03);
  std::size_t total = 0;
  for (const auto& [label, n] : r.query_counts) total += n;
  EXPECT_EQ(total, 1000u);
}

TEST(Kway, MissingSupportClassIsAnError) {
  Rng rng(33);
  const auto support = random_set(3, 2, 4, rng);
  auto queries = random_set(4, 1, 4, rng);
  EXPECT_THROW(nearest_mean_classification(support, queries), DataError);
}

TEST(Kway, NetworkPathCountsEveryQuery) {
  const auto& m = small_dataset();
  const EmbeddingNet net = EmbeddingNet::build(small_net_config(), 8);
  const DatasetSplit split = split_dataset(m, {0.5, 0.25, 0.25}, 1);
  const KwayReport r = evaluate_kway(net, split.train, split.test);
  std::size_t total = 0;
  for (const auto& [label, n] : r.query_counts) total += n;
  EXPECT_EQ(total, split.test.size());
  EXPECT_GE(r.accuracy, 0.0);
  EXPECT_LE(r.accuracy, 1.0);
}

std::vector<std::pair<double, int>> as_oracle(const std::vector<ScoredPair>& s) {
  std::vector<std::pair<double, int>> out;
  for (const auto& p : s) out.emplace_back(p.distance, p.label);
  return out;
}

void expect_roc_invariants(const RocCurve& c) {
  ASSERT_GE(c.points.size(), 2u);
  EXPECT_EQ(c.points.front().fpr, 0.0);
  EXPECT_EQ(c.points.front().tpr, 0.0);
  EXPECT_EQ(c.points.back().fpr, 1.0);
  EXPECT_EQ(c.points.back().tpr, 1.0);
  double area = 0.0;
  for (std::size_t i = 1; i < c.points.size(); ++i) {
    EXPECT_GE(c.points[i].fpr, c.points[i - 1].fpr);
    EXPECT_GE(c.points[i].tpr, c.points[i - 1].tpr);
    EXPECT_GT(c.points[i].threshold, c.points[i - 1].threshold);
    area += (c.points[i].fpr - c.points[i - 1].fpr) * (c.points[i].tpr + c.points[i - 1].tpr) / 2.0;
  }
  EXPECT_NEAR(c.auc, area, 1e-12);
  EXPECT_GE(c.auc, 0.0);
  EXPECT_LE(c.auc, 1.0);
}

TEST(Roc, PerfectlySeparated) {
  std::vector<ScoredPair> s;
  for (int i = 0; i < 50; ++i) s.push_back({0.1f * static_cast<float>(i), 1});
  for (int i = 0; i < 50; ++i) s.push_back({10.0f + 0.1f * static_cast<float>(i), 0});
  const RocCurve c = roc(s);
  EXPECT_EQ(c.auc, 1.0);
  expect_roc_invariants(c);
}

TEST(Roc, IndependentLabelsAreAtChance) {
  Rng rng(40);
  std::vector<ScoredPair> s;
  for (int i = 0; i < 10000; ++i) s.push_back({static_cast<float>(rng.uniform(0.0, 2.0)), static_cast<int>(rng.below(2))});
  const RocCurve c = roc(s);
  EXPECT_NEAR(c.auc, 0.5, 0.02);
  expect_roc_invariants(c);
}

TEST(Roc, HandExamples) {
  const std::vector<ScoredPair> sep{{0.1f, 1}, {0.2f, 1}, {0.3f, 0}, {0.4f, 0}};
  EXPECT_EQ(roc(sep).auc, 1.0);
  const std::vector<ScoredPair> mixed{{0.1f, 1}, {0.2f, 0}, {0.3f, 1}, {0.4f, 0}};
  EXPECT_NEAR(roc(mixed).auc, oracle::concordance_auc(as_oracle(mixed)), 1e-9);
  EXPECT_NEAR(roc(mixed).auc, 0.75, 1e-12);
  const std::vector<ScoredPair> ties{{0.5f, 1}, {0.5f, 0}};
  EXPECT_NEAR(roc(ties).auc, 0.5, 1e-12);
  EXPECT_EQ(roc(ties).points.size(), 2u);
}

TEST(Roc, MatchesConcordanceOracle) {
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ScoredPair> s;
    const int n = 4 + trial;
    for (int i = 0; i < n; ++i) // Coarse values force ties.
      s.push_back({0.25f * static_cast<float>(rng.below(8)), i % 2});
    const RocCurve c = roc(s);
    EXPECT_NEAR(c.auc, oracle::concordance_auc(as_oracle(s)), 1e-9) << "trial " << trial;
    expect_roc_invariants(c);
  }
}

TEST(Roc, SingleLabelThrows) {
  const std::vector<ScoredPair> s{{0.1f, 1}, {0.2f, 1}};
  EXPECT_THROW(roc(s), std::invalid_argument);
}

TEST(Roc, CsvFormat) {
  const std::vector<ScoredPair> s{{0.25f, 1}, {0.5f, 0}};
  EXPECT_EQ(format_roc_csv(roc(s)), "fpr,tpr,threshold\n0,0,-inf\n0,1,0.25\n1,1,0.5\n");
}

// Evaluation pairs need a second image per source, so grids run on
// augmented data.
const DatasetManifest& grid_dataset() {
  static const DatasetManifest m = balance(rendered_dataset(4, 5, 16, 12), 3);
  return m;
}

GridConfig tiny_grid() {
  GridConfig g;
  g.ways = {3};
  g.shots = {1, 2};
  g.net = small_net_config();
  g.train = fast_config(2);
  g.seed = 9;
  return g;
}

TEST(Grid, EmptyWaysGiveEmptyTable) {
  GridConfig g = tiny_grid();
  g.ways.clear();
  const GridResult r = run_experiment_grid(grid_dataset(), g);
  EXPECT_TRUE(r.reports.empty());
  EXPECT_TRUE(r.skipped.empty());
  EXPECT_EQ(format_grid_tsv(r), "way\tshot\tval_acc\ttest_acc\tauc\tthreshold\tseed\n");
}

TEST(Grid, SameSeedsSameTable) {
  const GridResult a = run_experiment_grid(grid_dataset(), tiny_grid());
  const GridResult b = run_experiment_grid(grid_dataset(), tiny_grid());
  ASSERT_EQ(a.reports.size(), 2u) << (a.skipped.empty() ? "" : a.skipped[0]);
  EXPECT_EQ(format_grid_tsv(a), format_grid_tsv(b));
  EXPECT_EQ(format_grid_report_json(a), format_grid_report_json(b));
  for (const auto& rep : a.reports) {
    EXPECT_EQ(rep.k_way, 3u);
    EXPECT_EQ(rep.seed, cell_seed(9, 3, rep.n_shot));
    EXPECT_GE(rep.test_accuracy, 0.0);
    EXPECT_LE(rep.test_accuracy, 1.0);
    EXPECT_EQ(rep.auc, rep.roc_curve.auc);
    EXPECT_EQ(rep.per_class_counts.size(), 3u);
  }
}

TEST(Grid, ParallelCellsMatchSerial) {
  GridConfig g = tiny_grid();
  const GridResult serial = run_experiment_grid(grid_dataset(), g);
  g.jobs = 2;
  const GridResult parallel = run_experiment_grid(grid_dataset(), g);
  EXPECT_EQ(format_grid_tsv(serial), format_grid_tsv(parallel));
}

TEST(Grid, InfeasibleCellsAreSkippedWithReason) {
  GridConfig g = tiny_grid();
  g.ways = {3, 9};    // only 4 classes
  g.shots = {1, 50};  // only 5 sources per class
  const GridResult r = run_experiment_grid(grid_dataset(), g);
  ASSERT_EQ(r.reports.size(), 1u);
  EXPECT_EQ(r.reports[0].n_shot, 1u);
  ASSERT_EQ(r.skipped.size(), 3u);
  for (const auto& s : r.skipped) EXPECT_NE(s.find(": "), std::string::npos) << s;
}

TEST(Grid, WritesOutputs) {
  const GridResult r = run_experiment_grid(grid_dataset(), tiny_grid());
  testing::TempDir dir("grid");
  write_grid_outputs(r, dir.path());
  for (const char* f : {"results.tsv", "report.json", "roc_3x1.csv", "roc_3x2.csv", "log_3x1.csv"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
}

}  // namespace
}  // namespace fewshot
