#include "fewshot/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "fewshot/checkpoint.hpp"
#include "fewshot/dataset.hpp"
#include "fewshot/errors.hpp"
#include "fewshot/evaluate.hpp"
#include "fewshot/grid.hpp"
#include "fewshot/pairs.hpp"
#include "fewshot/rng.hpp"
#include "fewshot/train.hpp"
#include "json.hpp"

namespace fewshot::cli {

namespace fs = std::filesystem;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  fs::path out_dir = ".";
};

struct SynthArgs {
  std::size_t classes = 10;
  std::size_t per_class = 20;
  std::size_t size = 32;
  fs::path out;
};

struct PrepareArgs {
  fs::path in, out;
  std::size_t target_size = 100;
  bool no_balance = false;
};

struct SplitArgs {
  fs::path manifest, out;
  std::vector<double> fractions{0.6, 0.2, 0.2};
};

struct PairsArgs {
  fs::path manifest, out;
  std::size_t way = 0;  // 0: every class
  std::size_t shot = 1;
  std::size_t pairs_per_image = 1;
  bool evaluation = false;
};

struct TrainArgs {
  fs::path manifest, pairs, val_pairs, checkpoint_out, last_out, log_out, resume;
  TrainConfig config;
  std::size_t patience = 0;  // 0: no early stopping
  std::string stop_metric = "val_acc";
};

struct EvalArgs {
  fs::path checkpoint, manifest, pairs, support, queries, roc_out, report_out;
  std::optional<float> threshold;
};

struct GridArgs {
  fs::path manifest, out;
  GridConfig config;
  std::vector<double> fractions{0.6, 0.2, 0.2};
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw DataError("cannot write " + path.string());
}

fs::path or_default(const fs::path& given, const fs::path& fallback) {
  return given.empty() ? fallback : given;
}

std::array<double, 3> as_fractions(const std::vector<double>& v) {
  if (v.size() != 3) throw std::invalid_argument("--fractions takes three values: train,val,test");
  return {v[0], v[1], v[2]};
}

std::string summarize(const PairSet& set) {
  std::size_t positives = 0;
  for (const Pair& p : set.pairs) positives += p.y == 1 ? 1 : 0;
  return "pairs=" + std::to_string(set.pairs.size()) + " positive=" + std::to_string(positives);
}

int cmd_synth(const Globals& g, const SynthArgs& a, std::ostream& out) {
  const fs::path root = or_default(a.out, g.out_dir / "synthetic");
  make_synthetic_dataset(root, a.classes, a.per_class, a.size, a.size, g.seed);
  out << "synth: " << a.classes * a.per_class << " images in " << root.string() << "\n";
  return kOk;
}

int cmd_prepare(const Globals& g, const PrepareArgs& a, std::ostream& out, std::ostream& err) {
  const fs::path dest = or_default(a.out, g.out_dir / "prepared");
  DatasetManifest m = dedup(ingest(a.in, a.target_size, a.target_size));
  if (!a.no_balance) m = balance(m, g.seed);
  m.seed = g.seed;
  write_manifest(m, dest);
  std::string log;
  for (const std::string& line : m.provenance) log += line + "\n";
  write_text(dest / "provenance.log", log);
  err << log;
  for (const ClassEntry& cls : m.classes) out << "prepare: " << cls.label << " " << cls.ids.size() << "\n";
  return kOk;
}

int cmd_split(const Globals& g, const SplitArgs& a, std::ostream& out) {
  const fs::path dest = or_default(a.out, g.out_dir / "split");
  const DatasetSplit split = split_dataset(read_manifest(a.manifest), as_fractions(a.fractions), g.seed);
  write_manifest(split.train, dest / "train");
  write_manifest(split.val, dest / "val");
  write_manifest(split.test, dest / "test");
  out << "split: train=" << split.train.size() << " val=" << split.val.size()
      << " test=" << split.test.size() << "\n";
  return kOk;
}

int cmd_pairs(const Globals& g, const PairsArgs& a, std::ostream& out, std::ostream& err) {
  const fs::path dest = or_default(a.out, g.out_dir / "pairs.csv");
  const DatasetManifest m = read_manifest(a.manifest);
  PairSet set;
  if (a.evaluation) {
    set = generate_evaluation_pairs(m, a.pairs_per_image, g.seed);
  } else {
    EpisodeSpec spec;
    spec.k_way = a.way == 0 ? m.classes.size() : a.way;
    spec.n_shot = a.shot;
    spec.pairs_per_image = a.pairs_per_image;
    spec.seed = g.seed;
    set = generate_balanced_pairs(m, spec);
  }
  for (const std::string& line : set.log) err << "pairs: " << line << "\n";
  write_pairs(set, dest);
  out << "pairs: " << summarize(set) << " -> " << dest.string() << "\n";
  return kOk;
}

int cmd_train(const Globals& g, TrainArgs a, std::ostream& out, std::ostream& err) {
  const fs::path best_path = or_default(a.checkpoint_out, g.out_dir / "best.ckpt");
  const fs::path last_path = or_default(a.last_out, g.out_dir / "last.ckpt");
  const fs::path log_path = or_default(a.log_out, g.out_dir / "train_log.csv");
  a.config.seed = g.seed;
  if (a.patience > 0) a.config.early_stop = EarlyStop{a.patience, a.stop_metric};
  a.config.validate();

  const DatasetManifest m = read_manifest(a.manifest);
  const PairSet train_pairs = read_pairs(a.pairs);
  const PairSet val_pairs = read_pairs(a.val_pairs);

  std::optional<Checkpoint> resume;
  if (!a.resume.empty()) resume = load_checkpoint(a.resume);
  EmbeddingNet net = resume ? restore_network(*resume)
                            : EmbeddingNet::build(EmbeddingNetConfig::for_input(m.target_height, m.target_width),
                                                  derive_seed(g.seed, "init"));
  const TrainResult r = train(net, m, train_pairs.pairs, val_pairs.pairs, a.config, resume ? &*resume : nullptr,
                              [&](const EpochRecord& e) {
                                char line[128];
                                std::snprintf(line, sizeof line, "epoch %zu loss=%.6f val_acc=%.4f threshold=%.4f\n",
                                              e.epoch, e.train_loss, e.val_acc, e.threshold);
                                err << line << std::flush;
                              });
  save_checkpoint(r.last, last_path);
  if (r.best) {
    save_checkpoint(*r.best, best_path);
  } else {
    err << "train: no improvement over the resumed checkpoint; " << best_path.string() << " left as is\n";
  }
  write_text(log_path, format_training_log(r.log));
  if (r.stopped_early) err << "train: early stop after epoch " << r.log.back().epoch << "\n";
  out << "train: epochs=" << r.log.size();
  if (r.best) out << " best_epoch=" << r.best->epoch << " best_val_acc=" << r.best->metadata.at("val_acc");
  out << "\n";
  return kOk;
}

int cmd_eval(const Globals& g, const EvalArgs& a, std::ostream& out) {
  const bool verification = !a.pairs.empty();
  const bool kway = !a.support.empty() || !a.queries.empty();
  if (!verification && !kway) throw std::invalid_argument("eval needs --pairs or --support with --queries");
  if (kway && (a.support.empty() || a.queries.empty())) {
    throw std::invalid_argument("--support and --queries go together");
  }
  if (verification && a.manifest.empty()) throw std::invalid_argument("--pairs needs --manifest");

  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const EmbeddingNet net = restore_network(ckpt);
  nlohmann::ordered_json report;
  report["checkpoint_epoch"] = ckpt.epoch;
  if (verification) {
    float threshold = 0.0f;
    if (a.threshold) {
      threshold = *a.threshold;
    } else if (const auto it = ckpt.metadata.find("threshold"); it != ckpt.metadata.end()) {
      threshold = std::stof(it->second);
    } else {
      throw std::invalid_argument("checkpoint has no calibrated threshold; pass --threshold");
    }
    const DatasetManifest m = read_manifest(a.manifest);
    const PairSet pairs = read_pairs(a.pairs);
    const auto scored = score_pairs(net, m, pairs.pairs);
    const double acc = verification_accuracy(scored, threshold);
    const RocCurve curve = roc(scored);
    const fs::path roc_path = or_default(a.roc_out, g.out_dir / "roc.csv");
    write_text(roc_path, format_roc_csv(curve));
    std::size_t positives = 0;
    for (const auto& s : scored) positives += s.label == 1 ? 1 : 0;
    report["verification"] = {{"pairs", scored.size()},  {"positives", positives}, {"threshold", threshold},
                              {"accuracy", acc},         {"auc", curve.auc}};
    char line[128];
    std::snprintf(line, sizeof line, "eval: pairs=%zu accuracy=%.6f auc=%.6f threshold=%.6f\n", scored.size(),
                  acc, curve.auc, static_cast<double>(threshold));
    out << line;
  }
  if (kway) {
    const KwayReport r = evaluate_kway(net, read_manifest(a.support), read_manifest(a.queries));
    report["kway"] = {{"accuracy", r.accuracy}, {"queries", r.query_counts}, {"correct", r.correct_counts}};
    char line[64];
    std::snprintf(line, sizeof line, "eval: kway_accuracy=%.6f\n", r.accuracy);
    out << line;
  }
  write_text(or_default(a.report_out, g.out_dir / "eval.json"), report.dump(2) + "\n");
  return kOk;
}

int cmd_grid(const Globals& g, GridArgs a, std::ostream& out, std::ostream& err) {
  const fs::path dest = or_default(a.out, g.out_dir / "grid");
  a.config.seed = g.seed;
  a.config.fractions = as_fractions(a.fractions);
  a.config.train.validate();
  const DatasetManifest m = read_manifest(a.manifest);
  const GridResult r = run_experiment_grid(m, a.config, [&](const std::string& line) {
    err << "grid: " << line << "\n" << std::flush;
  });
  for (const std::string& s : r.skipped) err << "grid: skipped " << s << "\n";
  write_grid_outputs(r, dest);
  out << format_grid_tsv(r);
  return kOk;
}

// Effective options of the global scope and the chosen subcommand, in a form
// --config-file reads back.
std::string snapshot(const CLI::App& app, const std::string& subcommand) {
  std::istringstream all(app.config_to_str(true, false));
  std::string text, line;
  while (std::getline(all, line)) {
    const auto eq = line.find('=');
    const auto dot = line.find('.');
    const bool global = dot == std::string::npos || dot > eq;
    if (global || line.starts_with(subcommand + ".")) text += line + "\n";
  }
  return text;
}

// Adds the training flags shared by train and grid.
void add_train_flags(CLI::App* sub, TrainConfig& c) {
  sub->add_option("--epochs", c.epochs, "Training epochs")->capture_default_str();
  sub->add_option("--lr", c.lr, "RMSprop learning rate")->capture_default_str();
  sub->add_option("--rho", c.rho, "RMSprop decay")->capture_default_str();
  sub->add_option("--margin", c.margin, "Contrastive margin")->capture_default_str();
  sub->add_option("--batch-size", c.batch_size, "Pairs per minibatch")->capture_default_str();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Siamese few-shot verification toolkit"};
  app.name("fewshot");
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config-file", "", "INI file of option values; command-line flags override it");

  Globals g;
  app.add_option("--seed", g.seed, "Global seed")->capture_default_str();
  app.add_option("--out-dir", g.out_dir, "Directory for outputs and the effective-config snapshot")
      ->capture_default_str();

  SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "Render a synthetic shape dataset");
  synth_cmd->add_option("--classes", synth.classes, "Number of classes")->capture_default_str();
  synth_cmd->add_option("--per-class", synth.per_class, "Images per class")->capture_default_str();
  synth_cmd->add_option("--size", synth.size, "Image side in pixels")->capture_default_str();
  synth_cmd->add_option("--out", synth.out, "Output tree (default <out-dir>/synthetic)");

  PrepareArgs prepare;
  CLI::App* prepare_cmd = app.add_subcommand("prepare", "Ingest, deduplicate and balance an image tree");
  prepare_cmd->add_option("--in", prepare.in, "Input tree root/<class>/<images>")->required();
  prepare_cmd->add_option("--out", prepare.out, "Manifest directory (default <out-dir>/prepared)");
  prepare_cmd->add_option("--target-size", prepare.target_size, "Resize side in pixels")->capture_default_str();
  prepare_cmd->add_flag("--no-balance", prepare.no_balance, "Skip augmentation and balancing");

  SplitArgs split;
  CLI::App* split_cmd = app.add_subcommand("split", "Split a manifest into train/val/test by source image");
  split_cmd->add_option("--manifest", split.manifest, "manifest.json")->required();
  split_cmd->add_option("--fractions", split.fractions, "train,val,test")->delimiter(',')->capture_default_str();
  split_cmd->add_option("--out", split.out, "Output directory (default <out-dir>/split)");

  PairsArgs pairs;
  CLI::App* pairs_cmd = app.add_subcommand("pairs", "Generate a balanced pair list");
  pairs_cmd->add_option("--manifest", pairs.manifest, "manifest.json")->required();
  pairs_cmd->add_option("--way", pairs.way, "Classes per episode (0: all)")->capture_default_str();
  pairs_cmd->add_option("--shot", pairs.shot, "Source images per class")->capture_default_str();
  pairs_cmd->add_option("--pairs-per-image", pairs.pairs_per_image, "Positives (and negatives) per anchor")
      ->capture_default_str();
  pairs_cmd->add_flag("--evaluation", pairs.evaluation, "Every image as an anchor, no episode sampling");
  pairs_cmd->add_option("--out", pairs.out, "Pairs file (default <out-dir>/pairs.csv)");

  TrainArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "Train the Siamese network");
  train_cmd->add_option("--manifest", train_args.manifest, "manifest.json resolving pair ids")->required();
  train_cmd->add_option("--pairs", train_args.pairs, "Training pairs")->required();
  train_cmd->add_option("--val-pairs", train_args.val_pairs, "Validation pairs")->required();
  add_train_flags(train_cmd, train_args.config);
  train_cmd->add_option("--early-stop-patience", train_args.patience, "Epochs without improvement (0: off)")
      ->capture_default_str();
  train_cmd->add_option("--early-stop-metric", train_args.stop_metric, "val_acc or train_loss")
      ->check(CLI::IsMember({"val_acc", "train_loss"}))
      ->capture_default_str();
  train_cmd->add_option("--checkpoint-out", train_args.checkpoint_out, "Best checkpoint (default <out-dir>/best.ckpt)");
  train_cmd->add_option("--last-out", train_args.last_out, "Last checkpoint (default <out-dir>/last.ckpt)");
  train_cmd->add_option("--log-out", train_args.log_out, "Training log (default <out-dir>/train_log.csv)");
  train_cmd->add_option("--resume", train_args.resume, "Continue from a last checkpoint");

  EvalArgs eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--manifest", eval.manifest, "manifest.json resolving pair ids");
  eval_cmd->add_option("--pairs", eval.pairs, "Pairs for verification accuracy and ROC");
  eval_cmd->add_option("--support", eval.support, "Support manifest for k-way classification");
  eval_cmd->add_option("--queries", eval.queries, "Query manifest for k-way classification");
  eval_cmd->add_option("--threshold", eval.threshold, "Decision threshold (default: checkpoint's)");
  eval_cmd->add_option("--roc-out", eval.roc_out, "ROC points (default <out-dir>/roc.csv)");
  eval_cmd->add_option("--report-out", eval.report_out, "JSON report (default <out-dir>/eval.json)");

  GridArgs grid;
  CLI::App* grid_cmd = app.add_subcommand("grid", "Run the way x shot experiment grid");
  grid_cmd->add_option("--manifest", grid.manifest, "manifest.json")->required();
  grid_cmd->add_option("--ways", grid.config.ways, "Comma-separated way counts")->delimiter(',')->capture_default_str();
  grid_cmd->add_option("--shots", grid.config.shots, "Comma-separated shot counts")->delimiter(',')->capture_default_str();
  grid_cmd->add_option("--fractions", grid.fractions, "train,val,test")->delimiter(',')->capture_default_str();
  grid_cmd->add_option("--pairs-per-image", grid.config.pairs_per_image, "Training positives per anchor")
      ->capture_default_str();
  grid_cmd->add_option("--eval-pairs-per-image", grid.config.eval_pairs_per_image, "Val/test positives per anchor")
      ->capture_default_str();
  add_train_flags(grid_cmd, grid.config.train);
  grid_cmd->add_option("--jobs", grid.config.jobs, "Cells run concurrently")->check(CLI::PositiveNumber)
      ->capture_default_str();
  grid_cmd->add_option("--out", grid.out, "Output directory (default <out-dir>/grid)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kOk;
    }
    err << "error: " << e.what() << "\n" << "Run with --help for usage.\n";
    return kUsage;
  }

  try {
    CLI::App* used = app.get_subcommands().front();
    fs::create_directories(g.out_dir);
    write_text(g.out_dir / (used->get_name() + ".config.ini"), snapshot(app, used->get_name()));
    if (used == synth_cmd) return cmd_synth(g, synth, out);
    if (used == prepare_cmd) return cmd_prepare(g, prepare, out, err);
    if (used == split_cmd) return cmd_split(g, split, out);
    if (used == pairs_cmd) return cmd_pairs(g, pairs, out, err);
    if (used == train_cmd) return cmd_train(g, train_args, out, err);
    if (used == eval_cmd) return cmd_eval(g, eval, out);
    return cmd_grid(g, grid, out, err);
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kDataError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace fewshot::cli
