#include "fewshot/embedding_net.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "fewshot/errors.hpp"
#include "fewshot/metric.hpp"
#include "fewshot/ops.hpp"
#include "fewshot/rng.hpp"

namespace fewshot {

namespace {

constexpr std::array<std::array<std::size_t, kConvLayers>, 7> kPoolPreference{{
    {3, 3, 2, 0, 0, 0},
    {3, 3, 0, 0, 0, 0},
    {3, 2, 0, 0, 0, 0},
    {3, 0, 0, 2, 0, 0},
    {3, 0, 0, 0, 0, 0},
    {2, 0, 0, 0, 0, 0},
    {0, 0, 0, 0, 0, 0},
}};

std::string format_float(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
  return buf;
}

template <typename T>
std::string join(const std::array<T, kConvLayers>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

std::size_t parse_size(const std::string& key, std::string_view text) {
  std::size_t value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw std::invalid_argument("config key '" + key + "': bad integer '" + std::string(text) + "'");
  }
  return value;
}

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(sep, start);
    parts.emplace_back(text.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::array<std::size_t, kConvLayers> parse_six(const std::string& key, const std::string& text) {
  const auto parts = split(text, ',');
  if (parts.size() != kConvLayers) {
    throw std::invalid_argument("config key '" + key + "': expected 6 values");
  }
  std::array<std::size_t, kConvLayers> out{};
  for (std::size_t i = 0; i < kConvLayers; ++i) out[i] = parse_size(key, parts[i]);
  return out;
}

float parse_float(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const float v = std::stof(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "': bad number '" + text + "'");
  }
}

Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<float> values(shape_numel(shape));
  for (float& v : values) v = static_cast<float>(rng.uniform(-limit, limit));
  return Tensor::from_data(std::move(shape), std::move(values), true);
}

}  // namespace

EmbeddingNetConfig EmbeddingNetConfig::for_input(std::size_t height, std::size_t width,
                                                 std::size_t channels) {
  EmbeddingNetConfig config;
  config.input_height = height;
  config.input_width = width;
  config.input_channels = channels;
  for (const auto& schedule : kPoolPreference) {
    config.pool_schedule = schedule;
    try {
      config.validate();
      return config;
    } catch (const ShapeError&) {
    }
  }
  config.validate();  // rethrows the collapse for the last candidate
  return config;
}

std::vector<LayerGeometry> layer_geometry(const EmbeddingNetConfig& config) {
  std::vector<LayerGeometry> out;
  std::size_t h = config.input_height, w = config.input_width;
  for (std::size_t i = 0; i < kConvLayers; ++i) {
    const KernelSize k = config.conv_kernels[i];
    if (k.height > h || k.width > w) {
      throw ShapeError("embedding net: conv layer " + std::to_string(i + 1) + " kernel " +
                       std::to_string(k.height) + "x" + std::to_string(k.width) +
                       " does not fit a " + std::to_string(h) + "x" + std::to_string(w) +
                       " feature map");
    }
    LayerGeometry g{h, w, h - k.height + 1, w - k.width + 1, 0, 0};
    g.out_height = g.conv_height;
    g.out_width = g.conv_width;
    if (const std::size_t p = config.pool_schedule[i]; p > 0) {
      g.out_height /= p;
      g.out_width /= p;
      if (g.out_height == 0 || g.out_width == 0) {
        throw ShapeError("embedding net: pooling " + std::to_string(p) + "x" + std::to_string(p) +
                         " after conv layer " + std::to_string(i + 1) + " collapses a " +
                         std::to_string(g.conv_height) + "x" + std::to_string(g.conv_width) +
                         " map");
      }
    }
    out.push_back(g);
    h = g.out_height;
    w = g.out_width;
  }
  return out;
}

void EmbeddingNetConfig::validate() const {
  if (input_height == 0 || input_width == 0 || input_channels == 0) {
    throw ShapeError("embedding net: input size must be positive");
  }
  for (std::size_t i = 0; i < kConvLayers; ++i) {
    if (conv_channels[i] == 0) throw ShapeError("embedding net: conv channel count is zero");
    if (i > 0 && conv_channels[i] <= conv_channels[i - 1]) {
      throw ShapeError("embedding net: conv_channels must be strictly increasing");
    }
    if (conv_kernels[i].height == 0 || conv_kernels[i].width == 0) {
      throw ShapeError("embedding net: conv kernel size is zero");
    }
  }
  if (dense_width == 0 || embedding_dim == 0) {
    throw ShapeError("embedding net: dense widths must be positive");
  }
  if (l1_kernel < 0.0f || l1_bias < 0.0f || l1_activity < 0.0f) {
    throw ShapeError("embedding net: L1 coefficients must be non-negative");
  }
  layer_geometry(*this);
}

bool EmbeddingNetConfig::uses_reference_ladder() const {
  const EmbeddingNetConfig reference;
  return conv_channels.front() == 50 && conv_channels.back() == 220 &&
         conv_kernels == reference.conv_kernels && dense_width == 512 && embedding_dim == 128;
}

std::string EmbeddingNetConfig::to_canonical_text() const {
  std::map<std::string, std::string> kv;
  kv["conv_channels"] = join(conv_channels);
  std::string kernels;
  for (std::size_t i = 0; i < kConvLayers; ++i) {
    if (i) kernels += ',';
    kernels += std::to_string(conv_kernels[i].height) + "x" + std::to_string(conv_kernels[i].width);
  }
  kv["conv_kernels"] = kernels;
  kv["dense_width"] = std::to_string(dense_width);
  kv["embedding_dim"] = std::to_string(embedding_dim);
  kv["input_channels"] = std::to_string(input_channels);
  kv["input_height"] = std::to_string(input_height);
  kv["input_width"] = std::to_string(input_width);
  kv["l1_activity"] = format_float(l1_activity);
  kv["l1_bias"] = format_float(l1_bias);
  kv["l1_kernel"] = format_float(l1_kernel);
  kv["pool_schedule"] = join(pool_schedule);
  std::string out;
  for (const auto& [key, value] : kv) out += key + "=" + value + "\n";
  return out;
}

EmbeddingNetConfig EmbeddingNetConfig::from_canonical_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto take = [&](const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw std::invalid_argument("config key missing: " + key);
    std::string value = it->second;
    kv.erase(it);
    return value;
  };
  EmbeddingNetConfig c;
  c.conv_channels = parse_six("conv_channels", take("conv_channels"));
  const auto kernel_parts = split(take("conv_kernels"), ',');
  if (kernel_parts.size() != kConvLayers) {
    throw std::invalid_argument("config key 'conv_kernels': expected 6 values");
  }
  for (std::size_t i = 0; i < kConvLayers; ++i) {
    const auto hw = split(kernel_parts[i], 'x');
    if (hw.size() != 2) throw std::invalid_argument("config key 'conv_kernels': expected HxW");
    c.conv_kernels[i] = {parse_size("conv_kernels", hw[0]), parse_size("conv_kernels", hw[1])};
  }
  c.dense_width = parse_size("dense_width", take("dense_width"));
  c.embedding_dim = parse_size("embedding_dim", take("embedding_dim"));
  c.input_channels = parse_size("input_channels", take("input_channels"));
  c.input_height = parse_size("input_height", take("input_height"));
  c.input_width = parse_size("input_width", take("input_width"));
  c.l1_activity = parse_float("l1_activity", take("l1_activity"));
  c.l1_bias = parse_float("l1_bias", take("l1_bias"));
  c.l1_kernel = parse_float("l1_kernel", take("l1_kernel"));
  c.pool_schedule = parse_six("pool_schedule", take("pool_schedule"));
  if (!kv.empty()) throw std::invalid_argument("config key not recognized: " + kv.begin()->first);
  return c;
}

EmbeddingNet EmbeddingNet::build(const EmbeddingNetConfig& config, std::uint64_t seed) {
  config.validate();
  EmbeddingNet net;
  net.config_ = config;
  net.geometry_ = layer_geometry(config);
  Rng rng(seed);
  std::size_t in_channels = config.input_channels;
  for (std::size_t i = 0; i < kConvLayers; ++i) {
    const std::size_t filters = config.conv_channels[i];
    const KernelSize k = config.conv_kernels[i];
    const std::size_t fan_in = in_channels * k.height * k.width;
    net.conv_kernel_[i] = he_uniform({filters, in_channels, k.height, k.width}, fan_in, rng);
    net.conv_bias_[i] = Tensor::zeros({filters}, true);
    in_channels = filters;
  }
  const LayerGeometry& last = net.geometry_.back();
  const std::size_t flat = in_channels * last.out_height * last.out_width;
  net.dense1_weight_ = he_uniform({flat, config.dense_width}, flat, rng);
  net.dense1_bias_ = Tensor::zeros({config.dense_width}, true);
  net.dense2_weight_ = he_uniform({config.dense_width, config.embedding_dim}, config.dense_width, rng);
  net.dense2_bias_ = Tensor::zeros({config.embedding_dim}, true);
  return net;
}

EmbeddingNet::Output EmbeddingNet::forward(const Tensor& batch) const {
  if (batch.rank() != 4 || batch.dim(1) != config_.input_channels ||
      batch.dim(2) != config_.input_height || batch.dim(3) != config_.input_width) {
    throw ShapeError("embed: batch shape " + shape_to_string(batch.shape()) + " does not match [B," +
                     std::to_string(config_.input_channels) + "," +
                     std::to_string(config_.input_height) + "," +
                     std::to_string(config_.input_width) + "]");
  }
  Tensor x = batch;
  for (std::size_t i = 0; i < kConvLayers; ++i) {
    x = ops::relu(ops::conv2d(x, conv_kernel_[i], conv_bias_[i]));
    if (const std::size_t p = config_.pool_schedule[i]; p > 0) x = ops::maxpool2d(x, p);
  }
  Tensor hidden = ops::relu(ops::dense(ops::flatten(x), dense1_weight_, dense1_bias_));
  Tensor embedding = ops::relu(ops::dense(hidden, dense2_weight_, dense2_bias_));
  return {embedding, hidden};
}

std::vector<NamedTensor> EmbeddingNet::named_parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < kConvLayers; ++i) {
    const std::string prefix = "conv" + std::to_string(i + 1);
    out.push_back({prefix + ".kernel", conv_kernel_[i]});
    out.push_back({prefix + ".bias", conv_bias_[i]});
  }
  out.push_back({"dense1.weight", dense1_weight_});
  out.push_back({"dense1.bias", dense1_bias_});
  out.push_back({"dense2.weight", dense2_weight_});
  out.push_back({"dense2.bias", dense2_bias_});
  return out;
}

std::vector<Tensor> EmbeddingNet::parameters() const {
  std::vector<Tensor> out;
  for (auto& named : named_parameters()) out.push_back(named.tensor);
  return out;
}

std::size_t EmbeddingNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& named : named_parameters()) n += named.tensor.numel();
  return n;
}

EmbeddingNet EmbeddingNet::clone() const {
  EmbeddingNet copy = *this;
  auto fresh = [](const Tensor& t) {
    Tensor c = t.clone();
    c.set_requires_grad(true);
    return c;
  };
  for (std::size_t i = 0; i < kConvLayers; ++i) {
    copy.conv_kernel_[i] = fresh(conv_kernel_[i]);
    copy.conv_bias_[i] = fresh(conv_bias_[i]);
  }
  copy.dense1_weight_ = fresh(dense1_weight_);
  copy.dense1_bias_ = fresh(dense1_bias_);
  copy.dense2_weight_ = fresh(dense2_weight_);
  copy.dense2_bias_ = fresh(dense2_bias_);
  return copy;
}

void EmbeddingNet::load_parameters(const std::vector<NamedTensor>& tensors) {
  for (auto& target : named_parameters()) {
    const NamedTensor* found = nullptr;
    for (const NamedTensor& t : tensors) {
      if (t.name == target.name) {
        found = &t;
        break;
      }
    }
    if (found == nullptr) {
      throw CheckpointError(CheckpointError::Kind::kMissingTensor,
                            "checkpoint is missing tensor '" + target.name + "'");
    }
    if (found->tensor.shape() != target.tensor.shape()) {
      throw ShapeError("tensor '" + target.name + "' has shape " +
                       shape_to_string(found->tensor.shape()) + ", expected " +
                       shape_to_string(target.tensor.shape()));
    }
    const auto src = found->tensor.data();
    std::copy(src.begin(), src.end(), target.tensor.mutable_data().begin());
  }
}

SiameseOutput siamese_forward_full(const EmbeddingNet& net, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("siamese_forward: branch shapes differ: " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
  }
  const std::size_t rows = a.dim(0);
  const EmbeddingNet::Output out = net.forward(ops::concat_rows(a, b));
  const Tensor ea = ops::slice_rows(out.embedding, 0, rows);
  const Tensor eb = ops::slice_rows(out.embedding, rows, 2 * rows);
  return {euclidean_distance(ea, eb), out.hidden};
}

Tensor siamese_forward(const EmbeddingNet& net, const Tensor& a, const Tensor& b) {
  return siamese_forward_full(net, a, b).distances;
}

Tensor l1_penalty(const EmbeddingNet& net, const Tensor& activations) {
  const EmbeddingNetConfig& c = net.config();
  const float rows = activations.rank() > 0 ? static_cast<float>(activations.dim(0)) : 1.0f;
  Tensor total = ops::scale(ops::abs_sum(net.hidden_weight()), c.l1_kernel);
  total = ops::add(total, ops::scale(ops::abs_sum(net.hidden_bias()), c.l1_bias));
  total = ops::add(total, ops::scale(ops::abs_sum(activations), c.l1_activity / rows));
  return total;
}

}  // namespace fewshot
