#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "../support/backends.hpp"
#include "../support/gradcheck.hpp"
#include "../support/oracles.hpp"
#include "fewshot/embedding_net.hpp"
#include "fewshot/errors.hpp"
#include "fewshot/metric.hpp"
#include "fewshot/ops.hpp"
#include "fewshot/optim.hpp"

namespace fewshot {
namespace {

using testing::random_tensor;

// Small enough for exhaustive replay and finite differences.
EmbeddingNetConfig tiny_config() {
  EmbeddingNetConfig c;
  c.input_height = 14;
  c.input_width = 14;
  c.input_channels = 2;
  c.conv_channels = {3, 4, 5, 6, 7, 8};
  c.conv_kernels = {{{2, 2}, {2, 2}, {2, 2}, {2, 2}, {2, 2}, {2, 2}}};
  c.pool_schedule = {2, 0, 0, 0, 0, 0};
  c.dense_width = 6;
  c.embedding_dim = 4;
  return c;
}

Tensor random_batch(const EmbeddingNetConfig& c, std::size_t b, Rng& rng) {
  return random_tensor({b, c.input_channels, c.input_height, c.input_width}, rng, 0.0, 1.0, false);
}

TEST(EmbeddingNet, DefaultParameterCount) {
  const EmbeddingNet net = EmbeddingNet::build(EmbeddingNetConfig{}, 0);
  EXPECT_EQ(net.parameter_count(), 606936u);
  const auto geometry = layer_geometry(EmbeddingNetConfig{});
  EXPECT_EQ(geometry.back().out_height, 1u);
  EXPECT_EQ(geometry.back().out_width, 1u);
}

TEST(EmbeddingNet, ParameterOrderAndNames) {
  const EmbeddingNet net = EmbeddingNet::build(tiny_config(), 0);
  const auto named = net.named_parameters();
  ASSERT_EQ(named.size(), 2 * kConvLayers + 4);
  EXPECT_EQ(named.front().name, "conv1.kernel");
  EXPECT_EQ(named[1].name, "conv1.bias");
  EXPECT_EQ(named[named.size() - 2].name, "dense2.weight");
  EXPECT_EQ(named.back().name, "dense2.bias");
  for (const auto& nt : named) {
    if (nt.name.ends_with(".bias")) {
      for (const float v : nt.tensor.data()) EXPECT_EQ(v, 0.0f);
    }
  }
}

TEST(EmbeddingNet, BuildIsDeterministicPerSeed) {
  const EmbeddingNet a = EmbeddingNet::build(tiny_config(), 42);
  const EmbeddingNet b = EmbeddingNet::build(tiny_config(), 42);
  const EmbeddingNet c = EmbeddingNet::build(tiny_config(), 43);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    ASSERT_TRUE(std::equal(pa[i].data().begin(), pa[i].data().end(), pb[i].data().begin()));
    any_diff |= !std::equal(pa[i].data().begin(), pa[i].data().end(), pc[i].data().begin());
  }
  EXPECT_TRUE(any_diff);
}

TEST(EmbeddingNet, CollapsingInputIsAShapeError) {
  EXPECT_THROW(EmbeddingNet::build(EmbeddingNetConfig::for_input(3, 3), 0), ShapeError);
  EmbeddingNetConfig c;
  c.pool_schedule = {3, 3, 2, 2, 2, 0};
  try {
    c.validate();
    FAIL() << "expected collapse";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("conv"), std::string::npos) << e.what();
  }
}

TEST(EmbeddingNet, ValidateRejectsBadLadders) {
  EmbeddingNetConfig c = tiny_config();
  c.conv_channels = {3, 3, 5, 6, 7, 8};
  EXPECT_THROW(c.validate(), ShapeError);
  c = tiny_config();
  c.dense_width = 0;
  EXPECT_THROW(c.validate(), ShapeError);
  EXPECT_TRUE(EmbeddingNetConfig{}.uses_reference_ladder());
  EXPECT_FALSE(tiny_config().uses_reference_ladder());
}

TEST(EmbeddingNet, ForInputKeepsDefaultAtFullSize) {
  EXPECT_EQ(EmbeddingNetConfig::for_input(100, 100), EmbeddingNetConfig{});
  const EmbeddingNetConfig small = EmbeddingNetConfig::for_input(32, 32);
  EXPECT_NO_THROW(small.validate());
  EXPECT_EQ(small.input_height, 32u);
}

TEST(EmbeddingNet, CanonicalTextRoundTrip) {
  const EmbeddingNetConfig c = tiny_config();
  const std::string text = c.to_canonical_text();
  EXPECT_EQ(EmbeddingNetConfig::from_canonical_text(text), c);
  EXPECT_EQ(EmbeddingNetConfig::from_canonical_text(EmbeddingNetConfig{}.to_canonical_text()),
            EmbeddingNetConfig{});
  // Keys are sorted.
  std::vector<std::string> keys;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t eol = text.find('\n', pos);
    const std::string line = text.substr(pos, eol - pos);
    keys.push_back(line.substr(0, line.find('=')));
    pos = eol + 1;
  }
  EXPECT_TRUE(std::is_sorted(keys.begin(), keys.end()));
}

TEST(EmbeddingNet, OutputShapeAndSign) {
  testing::for_each_backend([](kernels::Backend) {
    const EmbeddingNet net = EmbeddingNet::build(EmbeddingNetConfig{}, 3);
    Rng rng(5);
    const Tensor x = random_batch(net.config(), 2, rng);
    const auto out = net.forward(x);
    EXPECT_EQ(out.embedding.shape(), (Shape{2, 128}));
    EXPECT_EQ(out.hidden.shape(), (Shape{2, 512}));
    for (const float v : out.embedding.data()) {
      ASSERT_TRUE(std::isfinite(v));
      ASSERT_GE(v, 0.0f);
    }
  });
}

std::vector<float> to_float(const std::vector<double>& v) { return {v.begin(), v.end()}; }

void relu_inplace(std::vector<double>& v) {
  for (double& x : v) x = std::max(0.0, x);
}

TEST(EmbeddingNet, MatchesLayerByLayerReplay) {
  testing::for_each_backend([](kernels::Backend) {
    const EmbeddingNetConfig c = tiny_config();
    const EmbeddingNet net = EmbeddingNet::build(c, 11);
    Rng rng(17);
    const std::size_t b = 3;
    const Tensor x = random_batch(c, b, rng);
    const auto named = net.named_parameters();
    auto param = [&](std::size_t i) {
      return std::vector<float>(named[i].tensor.data().begin(), named[i].tensor.data().end());
    };

    std::vector<double> act(x.data().begin(), x.data().end());
    std::size_t ch = c.input_channels, h = c.input_height, w = c.input_width;
    for (std::size_t l = 0; l < kConvLayers; ++l) {
      const auto [kh, kw] = c.conv_kernels[l];
      act = oracle::conv2d(to_float(act), b, ch, h, w, param(2 * l), c.conv_channels[l], kh, kw,
                           param(2 * l + 1));
      relu_inplace(act);
      ch = c.conv_channels[l];
      h = h - kh + 1;
      w = w - kw + 1;
      if (c.pool_schedule[l] > 0) {
        act = oracle::maxpool2d(to_float(act), b, ch, h, w, c.pool_schedule[l]);
        h /= c.pool_schedule[l];
        w /= c.pool_schedule[l];
      }
    }
    const std::size_t flat = ch * h * w;
    const std::size_t d1 = 2 * kConvLayers;
    std::vector<double> hidden = oracle::dense(to_float(act), b, flat, param(d1), c.dense_width, param(d1 + 1));
    relu_inplace(hidden);
    std::vector<double> emb =
        oracle::dense(to_float(hidden), b, c.dense_width, param(d1 + 2), c.embedding_dim, param(d1 + 3));
    relu_inplace(emb);

    const auto out = net.forward(x);
    ASSERT_EQ(out.embedding.numel(), emb.size());
    for (std::size_t i = 0; i < emb.size(); ++i) {
      ASSERT_NEAR(out.embedding.at(i), emb[i], 1e-5 * std::max(1.0, std::fabs(emb[i])));
    }
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      ASSERT_NEAR(out.hidden.at(i), hidden[i], 1e-5 * std::max(1.0, std::fabs(hidden[i])));
    }
  });
}

TEST(Siamese, IdenticalInputsGiveZeroDistance) {
  const EmbeddingNet net = EmbeddingNet::build(EmbeddingNetConfig::for_input(32, 32), 2);
  Rng rng(3);
  const Tensor a = random_batch(net.config(), 4, rng);
  const Tensor d = siamese_forward(net, a, a.clone());
  for (const float v : d.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Siamese, SymmetricInArguments) {
  testing::for_each_backend([](kernels::Backend) {
    const EmbeddingNet net = EmbeddingNet::build(tiny_config(), 2);
    Rng rng(4);
    const Tensor a = random_batch(net.config(), 5, rng);
    const Tensor b = random_batch(net.config(), 5, rng);
    const Tensor ab = siamese_forward(net, a, b), ba = siamese_forward(net, b, a);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(ab.at(i), ba.at(i), 1e-6f);
  });
}

TEST(Siamese, BranchesMatchStandaloneEmbedding) {
  const EmbeddingNet net = EmbeddingNet::build(tiny_config(), 8);
  Rng rng(6);
  const Tensor a = random_batch(net.config(), 3, rng);
  const Tensor b = random_batch(net.config(), 3, rng);
  const Tensor d = siamese_forward(net, a, b);
  const Tensor ref = euclidean_distance(net.embed(a), net.embed(b));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(d.at(i), ref.at(i), 1e-6f);
}

TEST(Siamese, PermutingPairsPermutesDistances) {
  const EmbeddingNet net = EmbeddingNet::build(tiny_config(), 9);
  Rng rng(7);
  const Tensor a = random_batch(net.config(), 4, rng);
  const Tensor b = random_batch(net.config(), 4, rng);
  const Tensor d = siamese_forward(net, a, b);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  auto permute = [&](const Tensor& t) {
    Tensor out = ops::slice_rows(t, perm[0], perm[0] + 1);
    for (std::size_t i = 1; i < perm.size(); ++i) {
      out = ops::concat_rows(out, ops::slice_rows(t, perm[i], perm[i] + 1));
    }
    return out;
  };
  const Tensor dp = siamese_forward(net, permute(a), permute(b));
  for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_NEAR(dp.at(i), d.at(perm[i]), 1e-6f);
}

TEST(Siamese, SharedWeightsStaySharedAfterAStep) {
  EmbeddingNet net = EmbeddingNet::build(tiny_config(), 10);
  Rng rng(8);
  const Tensor a = random_batch(net.config(), 4, rng);
  const Tensor b = random_batch(net.config(), 4, rng);
  const Tensor y = Tensor::from_data({4}, {1, 0, 1, 0});
  RmsProp opt(net.parameters(), {1e-2f, 0.7f, 1e-8f});
  backward(contrastive_loss(siamese_forward(net, a, b), y, 1.0f));
  opt.step();
  const Tensor d = siamese_forward(net, a, b);
  const Tensor ref = euclidean_distance(net.embed(a), net.embed(b));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(d.at(i), ref.at(i), 1e-6f);
  // A gradient step reaches every parameter through the shared branches.
  EXPECT_EQ(opt.params().size(), net.parameters().size());
}

TEST(Siamese, GradientsMatchFiniteDifferences) {
  const EmbeddingNet net = EmbeddingNet::build(tiny_config(), 12);
  Rng rng(13);
  // Nonzero biases keep most units off the relu kink at exactly 0.
  for (const auto& nt : net.named_parameters()) {
    if (!nt.name.ends_with(".bias")) continue;
    Tensor t = nt.tensor;
    for (float& v : t.mutable_data()) v = static_cast<float>(rng.uniform(0.05, 0.15));
  }
  const Tensor a = random_batch(net.config(), 3, rng);
  const Tensor b = random_batch(net.config(), 3, rng);
  testing::GradCheckOptions opts;
  opts.max_entries_per_leaf = 20;
  const auto r = testing::check_gradients(
      [&] { return ops::mean(siamese_forward(net, a, b)); }, net.parameters(), opts);
  EXPECT_GT(r.checked, 100u);
  EXPECT_LT(r.max_relative_error, 1e-2) << r.worst;
}

TEST(Siamese, CloneIsIndependent) {
  const EmbeddingNet net = EmbeddingNet::build(tiny_config(), 1);
  EmbeddingNet copy = net.clone();
  copy.parameters()[0].mutable_data()[0] += 1.0f;
  EXPECT_NE(copy.parameters()[0].at(0), net.parameters()[0].at(0));
}

TEST(L1Penalty, ZeroCoefficientsGiveZero) {
  EmbeddingNetConfig c = tiny_config();
  c.l1_kernel = c.l1_bias = c.l1_activity = 0.0f;
  const EmbeddingNet net = EmbeddingNet::build(c, 1);
  Rng rng(2);
  const auto out = net.forward(random_batch(c, 2, rng));
  EXPECT_EQ(l1_penalty(net, out.hidden).item(), 0.0f);
}

TEST(L1Penalty, MatchesDirectSum) {
  const EmbeddingNetConfig c = tiny_config();
  const EmbeddingNet net = EmbeddingNet::build(c, 1);
  Rng rng(2);
  const auto out = net.forward(random_batch(c, 2, rng));
  double w = 0, bias = 0, act = 0;
  for (const float v : net.hidden_weight().data()) w += std::fabs(v);
  for (const float v : net.hidden_bias().data()) bias += std::fabs(v);
  for (const float v : out.hidden.data()) act += std::fabs(v);
  const double expected = 0.001 * w + 0.001 * bias + 0.001 * act / 2.0;
  EXPECT_NEAR(l1_penalty(net, out.hidden).item(), expected, 1e-6);
}

TEST(L1Penalty, GradientOnHiddenWeightIsSign) {
  const EmbeddingNetConfig c = tiny_config();
  const EmbeddingNet net = EmbeddingNet::build(c, 1);
  Rng rng(2);
  Tensor acts = random_tensor({2, c.dense_width}, rng, 0.1, 1.0, false);
  for (const Tensor& p : net.parameters()) Tensor(p).clear_grad();
  backward(l1_penalty(net, acts));
  const Tensor& w = net.hidden_weight();
  for (std::size_t i = 0; i < w.numel(); ++i) {
    const float expected = w.at(i) > 0 ? 0.001f : (w.at(i) < 0 ? -0.001f : 0.0f);
    ASSERT_FLOAT_EQ(w.grad()[i], expected);
  }
}

}  // namespace
}  // namespace fewshot
