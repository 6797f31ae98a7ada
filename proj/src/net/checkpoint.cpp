#include "fewshot/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "fewshot/errors.hpp"

namespace fewshot {

namespace {

constexpr char kMagic[8] = {'F', 'S', 'S', 'I', 'A', 'M', 'C', 'K'};
constexpr std::string_view kOptimizerPrefix = "rmsprop.";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t crc32_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  std::string string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (end_ - pos_ < n) {
      throw CheckpointError(CheckpointError::Kind::kCorrupt, "checkpoint is truncated");
    }
  }

  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

void encode_tensor(std::string& out, const NamedTensor& t) {
  put_u32(out, static_cast<std::uint32_t>(t.name.size()));
  out += t.name;
  put_u32(out, static_cast<std::uint32_t>(t.tensor.rank()));
  for (const std::size_t d : t.tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  for (const float v : t.tensor.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
}

constexpr std::string_view kMetaPrefix = "checkpoint.meta.";

// epoch < meta.* < seed keeps the lines sorted.
std::string metadata_text(const Checkpoint& c) {
  std::string text = "checkpoint.epoch=" + std::to_string(c.epoch) + "\n";
  for (const auto& [key, value] : c.metadata) {
    if (key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos) {
      throw std::invalid_argument("checkpoint metadata must be single-line key=value");
    }
    text += std::string(kMetaPrefix) + key + "=" + value + "\n";
  }
  return text + "checkpoint.seed=" + std::to_string(c.seed) + "\n";
}

}  // namespace

Checkpoint make_checkpoint(const EmbeddingNet& net, const RmsProp* optimizer, std::uint64_t epoch,
                           std::uint64_t seed) {
  Checkpoint c;
  c.config = net.config();
  for (const NamedTensor& p : net.named_parameters()) c.parameters.push_back({p.name, p.tensor.clone()});
  if (optimizer != nullptr) {
    const auto names = net.named_parameters();
    const auto& state = optimizer->state();
    for (std::size_t i = 0; i < state.size() && i < names.size(); ++i) {
      c.optimizer_state.push_back({std::string(kOptimizerPrefix) + names[i].name, state[i].clone()});
    }
  }
  c.epoch = epoch;
  c.seed = seed;
  return c;
}

std::string encode_checkpoint(const Checkpoint& c) {
  // "checkpoint.*" sorts before every config key, so prepending keeps the
  // whole block key-sorted.
  const std::string text = metadata_text(c) + c.config.to_canonical_text();
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const NamedTensor& t : c.parameters) encode_tensor(out, t);
  for (const NamedTensor& t : c.optimizer_state) encode_tensor(out, t);
  put_u32(out, crc32_of(out.data(), out.size()));
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(CheckpointError::Kind::kBadMagic, "not a checkpoint file (bad magic)");
  }
  if (bytes.size() < sizeof kMagic + 12) {
    throw CheckpointError(CheckpointError::Kind::kCorrupt, "checkpoint is truncated");
  }
  // Version before checksum: a future layout may checksum differently.
  Reader header(bytes, sizeof kMagic + 4);
  header.string(sizeof kMagic);
  const std::uint32_t version = header.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Kind::kVersion,
                          "checkpoint format version " + std::to_string(version) +
                              " is not supported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
  }
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) {
    stored |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[body + i])) << (8 * i);
  }
  if (crc32_of(bytes.data(), body) != stored) {
    throw CheckpointError(CheckpointError::Kind::kCorrupt, "checkpoint checksum mismatch");
  }
  Reader in(bytes, body);
  in.string(sizeof kMagic);
  in.u32();
  const std::string text = in.string(in.u32());
  Checkpoint c;
  std::string config_text;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.rfind("checkpoint.epoch=", 0) == 0) {
      c.epoch = std::stoull(line.substr(17));
    } else if (line.rfind(kMetaPrefix, 0) == 0) {
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos) {
        throw CheckpointError(CheckpointError::Kind::kCorrupt, "bad checkpoint metadata line");
      }
      c.metadata[line.substr(kMetaPrefix.size(), eq - kMetaPrefix.size())] = line.substr(eq + 1);
    } else if (line.rfind("checkpoint.seed=", 0) == 0) {
      c.seed = std::stoull(line.substr(16));
    } else {
      config_text += line + "\n";
    }
  }
  try {
    c.config = EmbeddingNetConfig::from_canonical_text(config_text);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(CheckpointError::Kind::kCorrupt,
                          std::string("checkpoint config unreadable: ") + e.what());
  }
  while (!in.done()) {
    NamedTensor t;
    t.name = in.string(in.u32());
    const std::uint32_t rank = in.u32();
    if (rank > 8) throw CheckpointError(CheckpointError::Kind::kCorrupt, "implausible tensor rank");
    Shape shape(rank);
    for (auto& d : shape) d = in.u32();
    const std::size_t n = shape_numel(shape);
    const std::string payload = in.string(n * 4);
    std::vector<float> values(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[i * 4 + b])) << (8 * b);
      }
      values[i] = std::bit_cast<float>(bits);
    }
    try {
      t.tensor = Tensor::from_data(std::move(shape), std::move(values));
    } catch (const ShapeError& e) {
      throw CheckpointError(CheckpointError::Kind::kCorrupt, e.what());
    }
    if (t.name.rfind(kOptimizerPrefix, 0) == 0) {
      c.optimizer_state.push_back(std::move(t));
    } else {
      c.parameters.push_back(std::move(t));
    }
  }
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw CheckpointError(CheckpointError::Kind::kIo, "cannot write checkpoint " + path.string());
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw CheckpointError(CheckpointError::Kind::kIo, "short write to checkpoint " + path.string());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw CheckpointError(CheckpointError::Kind::kIo, "cannot read checkpoint " + path.string());
  }
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

EmbeddingNet restore_network(const Checkpoint& checkpoint,
                             const std::optional<EmbeddingNetConfig>& expected) {
  if (expected && !(*expected == checkpoint.config)) {
    throw CheckpointError(CheckpointError::Kind::kConfigMismatch,
                          "checkpoint network config differs from the expected one:\n"
                          "checkpoint:\n" +
                              checkpoint.config.to_canonical_text() + "expected:\n" +
                              expected->to_canonical_text());
  }
  EmbeddingNet net = EmbeddingNet::build(checkpoint.config, checkpoint.seed);
  try {
    net.load_parameters(checkpoint.parameters);
  } catch (const ShapeError& e) {
    throw CheckpointError(CheckpointError::Kind::kConfigMismatch, e.what());
  }
  return net;
}

std::vector<Tensor> restore_optimizer_state(const Checkpoint& checkpoint, const EmbeddingNet& net) {
  std::vector<Tensor> state;
  for (const NamedTensor& p : net.named_parameters()) {
    const std::string want = std::string(kOptimizerPrefix) + p.name;
    const NamedTensor* found = nullptr;
    for (const NamedTensor& s : checkpoint.optimizer_state) {
      if (s.name == want) found = &s;
    }
    if (found == nullptr) {
      throw CheckpointError(CheckpointError::Kind::kMissingTensor,
                            "checkpoint has no optimizer state for '" + p.name + "'");
    }
    state.push_back(found->tensor.clone());
  }
  return state;
}

void save_network(const EmbeddingNet& net, const std::filesystem::path& path) {
  save_checkpoint(make_checkpoint(net, nullptr, 0, 0), path);
}

EmbeddingNet load_network(const std::filesystem::path& path,
                          const std::optional<EmbeddingNetConfig>& expected) {
  return restore_network(load_checkpoint(path), expected);
}

}  // namespace fewshot
