#include "fewshot/grid.hpp"

#include <atomic>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <thread>

#include "fewshot/errors.hpp"
#include "fewshot/pairs.hpp"
#include "json.hpp"

namespace fewshot {

std::uint64_t cell_seed(std::uint64_t seed, std::size_t way, std::size_t shot) {
  return derive_seed(seed, "cell/" + std::to_string(way) + "x" + std::to_string(shot));
}

namespace {

EvalReport run_cell(const DatasetManifest& manifest, const GridConfig& config, std::size_t way,
                    std::size_t shot) {
  EvalReport report;
  report.k_way = way;
  report.n_shot = shot;
  report.seed = cell_seed(config.seed, way, shot);
  const std::uint64_t s = report.seed;

  const DatasetManifest pool = restrict_classes(manifest, select_ways(manifest, way, s));
  const DatasetSplit split = split_dataset(pool, config.fractions, s);
  const PairSet train_pairs =
      generate_balanced_pairs(split.train, {way, shot, config.pairs_per_image, s, std::nullopt});
  const PairSet val_pairs =
      generate_evaluation_pairs(split.val, config.eval_pairs_per_image, derive_seed(s, "val"));
  const PairSet test_pairs =
      generate_evaluation_pairs(split.test, config.eval_pairs_per_image, derive_seed(s, "test"));

  const EmbeddingNetConfig net_config =
      config.net.value_or(EmbeddingNetConfig::for_input(manifest.target_height, manifest.target_width));
  EmbeddingNet net = EmbeddingNet::build(net_config, derive_seed(s, "init"));
  TrainConfig train_config = config.train;
  train_config.seed = s;
  const TrainResult trained = train(net, manifest, train_pairs.pairs, val_pairs.pairs, train_config);
  report.log = trained.log;

  const Checkpoint& best = trained.best ? *trained.best : trained.last;
  const EmbeddingNet best_net = restore_network(best);
  report.threshold = std::stof(best.metadata.at("threshold"));
  report.val_accuracy = std::stod(best.metadata.at("val_acc"));
  const auto scored = score_pairs(best_net, manifest, test_pairs.pairs);
  report.test_pairs = scored.size();
  report.test_accuracy = verification_accuracy(scored, report.threshold);
  report.roc_curve = roc(scored);
  report.auc = report.roc_curve.auc;

  // k-way: the training shots as support, the test originals as queries.
  const DatasetManifest support = sample_shots(split.train, shot, s);
  std::vector<ClassEntry> query_classes;
  for (const ClassEntry& cls : split.test.classes) {
    ClassEntry originals{cls.label, {}};
    for (const std::string& id : cls.ids) {
      if (!split.test.record(id).is_augmented) originals.ids.push_back(id);
    }
    if (originals.ids.empty()) originals.ids = cls.ids;
    query_classes.push_back(std::move(originals));
  }
  DatasetManifest queries = split.test;
  queries.classes = std::move(query_classes);
  const KwayReport kway = evaluate_kway(best_net, support, queries);
  report.kway_accuracy = kway.accuracy;
  report.per_class_counts = kway.query_counts;
  return report;
}

}  // namespace

GridResult run_experiment_grid(const DatasetManifest& manifest, const GridConfig& config,
                               const CellCallback& progress) {
  struct Cell {
    std::size_t way, shot;
    std::optional<EvalReport> report;
    std::string skip_reason;
  };
  std::vector<Cell> cells;
  for (const std::size_t way : config.ways) {
    for (const std::size_t shot : config.shots) cells.push_back({way, shot, std::nullopt, ""});
  }
  std::mutex progress_mutex;
  auto say = [&](const std::string& line) {
    if (!progress) return;
    std::lock_guard<std::mutex> lock(progress_mutex);
    progress(line);
  };
  auto work = [&](Cell& cell) {
    const std::string name = "way=" + std::to_string(cell.way) + " shot=" + std::to_string(cell.shot);
    try {
      cell.report = run_cell(manifest, config, cell.way, cell.shot);
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s: val_acc=%.4f test_acc=%.4f auc=%.4f", name.c_str(),
                    cell.report->val_accuracy, cell.report->test_accuracy, cell.report->auc);
      say(buf);
    } catch (const DataError& e) {
      cell.skip_reason = e.what();
    } catch (const ShapeError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      cell.skip_reason = e.what();
    }
    if (!cell.skip_reason.empty()) say(name + ": skipped: " + cell.skip_reason);
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(config.jobs, cells.size()));
  if (jobs <= 1) {
    for (Cell& cell : cells) work(cell);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> threads;
    std::exception_ptr failure;
    std::mutex failure_mutex;
    for (std::size_t t = 0; t < jobs; ++t) {
      threads.emplace_back([&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) {
          try {
            work(cells[i]);
          } catch (...) {
            std::lock_guard<std::mutex> lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (std::thread& t : threads) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  GridResult result;
  for (Cell& cell : cells) {
    if (cell.report) {
      result.reports.push_back(std::move(*cell.report));
    } else {
      result.skipped.push_back("way=" + std::to_string(cell.way) + " shot=" + std::to_string(cell.shot) +
                               ": " + cell.skip_reason);
    }
  }
  return result;
}

std::string format_grid_tsv(const GridResult& result) {
  std::string out = "way\tshot\tval_acc\ttest_acc\tauc\tthreshold\tseed\n";
  char buf[160];
  for (const EvalReport& r : result.reports) {
    std::snprintf(buf, sizeof buf, "%zu\t%zu\t%.6f\t%.6f\t%.6f\t%.6f\t%llu\n", r.k_way, r.n_shot,
                  r.val_accuracy, r.test_accuracy, r.auc, static_cast<double>(r.threshold),
                  static_cast<unsigned long long>(r.seed));
    out += buf;
  }
  return out;
}

std::string format_grid_report_json(const GridResult& result) {
  nlohmann::json cells = nlohmann::json::array();
  for (const EvalReport& r : result.reports) {
    cells.push_back({{"way", r.k_way},
                     {"shot", r.n_shot},
                     {"seed", r.seed},
                     {"val_acc", r.val_accuracy},
                     {"test_acc", r.test_accuracy},
                     {"auc", r.auc},
                     {"threshold", r.threshold},
                     {"test_pairs", r.test_pairs},
                     {"kway_acc", r.kway_accuracy},
                     {"per_class_test_queries", r.per_class_counts},
                     {"epochs_run", r.log.size()}});
  }
  return nlohmann::json{{"cells", cells}, {"skipped", result.skipped}}.dump(2) + "\n";
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

}  // namespace

void write_grid_outputs(const GridResult& result, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  write_text(out_dir / "results.tsv", format_grid_tsv(result));
  write_text(out_dir / "report.json", format_grid_report_json(result));
  for (const EvalReport& r : result.reports) {
    const std::string cell = std::to_string(r.k_way) + "x" + std::to_string(r.n_shot);
    write_text(out_dir / ("roc_" + cell + ".csv"), format_roc_csv(r.roc_curve));
    write_text(out_dir / ("log_" + cell + ".csv"), format_training_log(r.log));
  }
}

}  // namespace fewshot
