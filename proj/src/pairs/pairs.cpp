#include "fewshot/pairs.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "fewshot/errors.hpp"

namespace fewshot {

namespace {

// Source groups of a class in first-appearance order.
std::vector<std::vector<std::string>> source_groups(const DatasetManifest& m, const ClassEntry& cls) {
  std::vector<std::vector<std::string>> groups;
  std::map<std::string, std::size_t> index;
  for (const std::string& id : cls.ids) {
    const auto [it, inserted] = index.emplace(m.source_of(id), groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(id);
  }
  return groups;
}

DatasetManifest with_classes(const DatasetManifest& m, std::vector<ClassEntry> classes) {
  DatasetManifest out;
  out.target_height = m.target_height;
  out.target_width = m.target_width;
  out.seed = m.seed;
  out.provenance = m.provenance;
  for (const ClassEntry& cls : classes) {
    for (const std::string& id : cls.ids) out.records.emplace(id, m.record(id));
  }
  out.classes = std::move(classes);
  return out;
}

struct Candidates {
  std::vector<std::string> ids;
  std::string note;
};

Candidates positive_candidates(const DatasetManifest& episode, const DatasetManifest& pool,
                               const std::string& anchor, bool exclude_self) {
  const std::string label = episode.record(anchor).class_label;
  const std::string source = episode.source_of(anchor);
  auto collect = [&](const DatasetManifest& from, bool exclude) {
    std::vector<std::string> out;
    const ClassEntry* cls = from.find_class(label);
    if (cls == nullptr) return out;
    for (const std::string& id : cls->ids) {
      if (id == anchor) continue;
      if (exclude && from.source_of(id) == source) continue;
      out.push_back(id);
    }
    return out;
  };
  Candidates c{collect(episode, exclude_self), ""};
  if (!c.ids.empty()) return c;
  c.ids = collect(pool, exclude_self);
  if (!c.ids.empty()) {
    c.note = "positives for " + anchor + " drawn from the full class pool";
    return c;
  }
  if (exclude_self) {
    c.ids = collect(pool, false);
    if (!c.ids.empty()) {
      c.note = "positives for " + anchor + " include its own augmentations (no other source)";
      return c;
    }
  }
  throw DataError("class '" + label + "' has no positive partner for " + anchor);
}

PairSet pairs_for_episode(const DatasetManifest& episode, const DatasetManifest& pool,
                          std::size_t pairs_per_image, bool exclude_self, Rng& rng) {
  if (pairs_per_image == 0) throw std::invalid_argument("pairs_per_image must be at least 1");
  if (episode.classes.size() < 2) throw DataError("pair generation needs at least 2 classes");
  PairSet set;
  std::vector<std::string> anchors;
  for (const ClassEntry& cls : episode.classes) {
    for (const std::string& id : cls.ids) {
      const Candidates cand = positive_candidates(episode, pool, id, exclude_self);
      if (!cand.note.empty()) set.log.push_back(cand.note);
      std::vector<std::string> picks = cand.ids;
      if (picks.size() >= pairs_per_image) {
        // Partial Fisher-Yates: first pairs_per_image entries, no replacement.
        for (std::size_t i = 0; i < pairs_per_image; ++i) {
          std::swap(picks[i], picks[i + rng.below(picks.size() - i)]);
        }
        picks.resize(pairs_per_image);
      } else {
        set.log.push_back("positives for " + id + " drawn with replacement (" +
                          std::to_string(picks.size()) + " candidates)");
        std::vector<std::string> drawn;
        for (std::size_t i = 0; i < pairs_per_image; ++i) drawn.push_back(picks[rng.below(picks.size())]);
        picks = std::move(drawn);
      }
      for (std::string& partner : picks) {
        set.pairs.push_back({id, std::move(partner), 1});
        anchors.push_back(id);
      }
    }
  }
  // Same number of negatives, class first then image, so class sizes do not
  // skew which classes appear.
  for (const std::string& anchor : anchors) {
    const std::string& label = episode.record(anchor).class_label;
    std::vector<const ClassEntry*> others;
    for (const ClassEntry& cls : episode.classes) {
      if (cls.label != label) others.push_back(&cls);
    }
    const ClassEntry* other = others[rng.below(others.size())];
    set.pairs.push_back({anchor, other->ids[rng.below(other->ids.size())], 0});
  }
  rng.shuffle(set.pairs);
  return set;
}

}  // namespace

std::vector<std::string> select_ways(const DatasetManifest& manifest, std::size_t k_way,
                                     std::uint64_t seed) {
  if (k_way < 2) throw std::invalid_argument("k_way must be at least 2 (negatives need two classes)");
  if (k_way > manifest.classes.size()) {
    throw std::invalid_argument("k_way " + std::to_string(k_way) + " exceeds the " +
                                std::to_string(manifest.classes.size()) + " available classes");
  }
  std::vector<std::string> labels;
  for (const ClassEntry& cls : manifest.classes) labels.push_back(cls.label);
  Rng rng(derive_seed(seed, "select_ways"));
  rng.shuffle(labels);
  labels.resize(k_way);
  return labels;
}

DatasetManifest restrict_classes(const DatasetManifest& manifest, const std::vector<std::string>& labels) {
  std::vector<ClassEntry> classes;
  for (const std::string& label : labels) {
    const ClassEntry* cls = manifest.find_class(label);
    if (cls == nullptr) throw DataError("unknown class '" + label + "'");
    classes.push_back(*cls);
  }
  return with_classes(manifest, std::move(classes));
}

DatasetSplit split_dataset(const DatasetManifest& manifest, const std::array<double, 3>& fractions,
                           std::uint64_t seed) {
  for (const double f : fractions) {
    if (!(f > 0.0)) throw std::invalid_argument("split fractions must be positive");
  }
  if (std::fabs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) {
    throw std::invalid_argument("split fractions must sum to 1");
  }
  std::array<std::vector<ClassEntry>, 3> parts;
  std::vector<std::string> log;
  for (const ClassEntry& cls : manifest.classes) {
    auto groups = source_groups(manifest, cls);
    const std::size_t n = groups.size();
    if (n < 3) {
      throw DataError("class '" + cls.label + "' has " + std::to_string(n) +
                      " source images; a three-way split needs at least 3");
    }
    Rng rng(derive_seed(seed, "split/" + cls.label));
    rng.shuffle(groups);
    auto rounded = [&](double f) {
      return static_cast<std::size_t>(std::max(1LL, std::llround(f * static_cast<double>(n))));
    };
    std::size_t n_train = rounded(fractions[0]), n_val = rounded(fractions[1]);
    while (n_train + n_val > n - 1) {
      if (n_train >= n_val && n_train > 1) {
        --n_train;
      } else {
        --n_val;
      }
    }
    const std::size_t counts[3] = {n_train, n_val, n - n_train - n_val};
    std::size_t next = 0;
    for (std::size_t p = 0; p < 3; ++p) {
      std::map<std::string, bool> in_part;
      for (std::size_t g = 0; g < counts[p]; ++g, ++next) {
        for (const std::string& id : groups[next]) in_part[id] = true;
      }
      ClassEntry entry{cls.label, {}};
      for (const std::string& id : cls.ids) {
        if (in_part.count(id)) entry.ids.push_back(id);
      }
      parts[p].push_back(std::move(entry));
    }
    log.push_back("split: class " + cls.label + " sources train=" + std::to_string(counts[0]) +
                  " val=" + std::to_string(counts[1]) + " test=" + std::to_string(counts[2]));
  }
  DatasetSplit split{with_classes(manifest, parts[0]), with_classes(manifest, parts[1]),
                     with_classes(manifest, parts[2])};
  for (DatasetManifest* m : {&split.train, &split.val, &split.test}) {
    m->provenance.insert(m->provenance.end(), log.begin(), log.end());
  }
  return split;
}

DatasetManifest sample_shots(const DatasetManifest& manifest, std::size_t n_shot, std::uint64_t seed) {
  if (n_shot < 1) throw std::invalid_argument("n_shot must be at least 1");
  std::vector<ClassEntry> classes;
  for (const ClassEntry& cls : manifest.classes) {
    auto groups = source_groups(manifest, cls);
    if (groups.size() < n_shot) {
      throw DataError("class '" + cls.label + "' has " + std::to_string(groups.size()) +
                      " source images, fewer than " + std::to_string(n_shot) + " shots");
    }
    Rng rng(derive_seed(seed, "shots/" + cls.label));
    rng.shuffle(groups);
    std::map<std::string, bool> chosen;
    for (std::size_t g = 0; g < n_shot; ++g) {
      for (const std::string& id : groups[g]) chosen[id] = true;
    }
    ClassEntry entry{cls.label, {}};
    for (const std::string& id : cls.ids) {
      if (chosen.count(id)) entry.ids.push_back(id);
    }
    classes.push_back(std::move(entry));
  }
  return with_classes(manifest, std::move(classes));
}

PairSet generate_balanced_pairs(const DatasetManifest& manifest, const EpisodeSpec& spec) {
  const DatasetManifest pool = restrict_classes(manifest, select_ways(manifest, spec.k_way, spec.seed));
  const DatasetManifest episode = sample_shots(pool, spec.n_shot, spec.seed);
  Rng rng(derive_seed(spec.seed, "pairs"));
  PairSet set = pairs_for_episode(episode, pool, spec.pairs_per_image, spec.excludes_self_augments(), rng);
  set.seed = spec.seed;
  set.k_way = spec.k_way;
  set.n_shot = spec.n_shot;
  return set;
}

PairSet generate_evaluation_pairs(const DatasetManifest& manifest, std::size_t pairs_per_image,
                                  std::uint64_t seed) {
  Rng rng(derive_seed(seed, "evaluation_pairs"));
  PairSet set = pairs_for_episode(manifest, manifest, pairs_per_image, true, rng);
  set.seed = seed;
  set.k_way = manifest.classes.size();
  std::size_t shots = SIZE_MAX;
  for (const ClassEntry& cls : manifest.classes) shots = std::min(shots, source_groups(manifest, cls).size());
  set.n_shot = shots;
  return set;
}

double unconstrained_same_class_rate(const DatasetManifest& manifest, std::size_t trials,
                                     std::uint64_t seed) {
  std::vector<std::size_t> class_of;
  for (std::size_t c = 0; c < manifest.classes.size(); ++c) {
    class_of.insert(class_of.end(), manifest.classes[c].ids.size(), c);
  }
  if (class_of.size() < 2 || trials == 0) throw std::invalid_argument("need 2 records and 1 trial");
  Rng rng(derive_seed(seed, "unconstrained"));
  std::size_t same = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t a = rng.below(class_of.size());
    std::size_t b = rng.below(class_of.size() - 1);
    if (b >= a) ++b;
    same += class_of[a] == class_of[b];
  }
  return static_cast<double>(same) / static_cast<double>(trials);
}

std::string format_pairs(const PairSet& set) {
  std::ostringstream out;
  out << "# pairs v1 seed=" << set.seed << " k=" << set.k_way << " n=" << set.n_shot << "\n";
  for (const Pair& p : set.pairs) out << p.a << ',' << p.b << ',' << p.y << "\n";
  return out.str();
}

PairSet parse_pairs(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("pairs file is empty");
  PairSet set;
  unsigned long long seed = 0;
  std::size_t k = 0, n = 0;
  if (std::sscanf(line.c_str(), "# pairs v1 seed=%llu k=%zu n=%zu", &seed, &k, &n) != 3) {
    throw DataError("pairs file has a bad header: " + line);
  }
  set.seed = seed;
  set.k_way = k;
  set.n_shot = n;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto c1 = line.find(','), c2 = line.rfind(',');
    if (c1 == std::string::npos || c1 == c2) {
      throw DataError("pairs file line " + std::to_string(line_no) + " is malformed");
    }
    const std::string label = line.substr(c2 + 1);
    if (label != "0" && label != "1") {
      throw DataError("pairs file line " + std::to_string(line_no) + " has label '" + label + "'");
    }
    set.pairs.push_back({line.substr(0, c1), line.substr(c1 + 1, c2 - c1 - 1), label == "1" ? 1 : 0});
  }
  return set;
}

void write_pairs(const PairSet& set, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << format_pairs(set);
}

PairSet read_pairs(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open pairs file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_pairs(buf.str());
}

}  // namespace fewshot
