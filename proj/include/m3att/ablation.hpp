#pragma once

// Ablation suites over decoder depth and fusion kind (table1) and over the
// model components (table2), each trained over several seeds.

#include "m3att/trainer.hpp"

#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

namespace m3att {

enum class Suite { kTable1, kTable2 };
Suite parse_suite(std::string_view text);
std::string_view to_string(Suite suite);

struct AblationVariant {
  std::string label;  // row label in the emitted table
  std::string key;    // short machine name for ledgers and directories
  ModelConfig model;
};

// table1: {shared, independent, generic_lav} x decoder layers 1..4, full
// model otherwise. table2: generic_lav baseline, mutual baseline, +IMI,
// +IMI*, full.
std::vector<AblationVariant> suite_variants(Suite suite, const ModelConfig& base);

struct RunRecord {
  std::string key;
  std::uint64_t seed = 0;
  EvalReport report;
  double initial_loss = 0.0;
  std::vector<EpochLog> epochs;
  double seconds = 0.0;
};

struct VariantSummary {
  AblationVariant variant;
  std::vector<RunRecord> runs;
  double mean_iou = 0.0;
  double std_iou = 0.0;   // population standard deviation over seeds
  double mean_pr50 = 0.0;
  double std_pr50 = 0.0;
};

struct AblationOptions {
  Suite suite = Suite::kTable2;
  std::size_t seeds = 3;
  std::uint64_t first_seed = 0;
  TrainConfig train;  // base schedule; model fields are overridden per variant
  std::filesystem::path out_dir;  // per-run dirs, results.tsv and table.txt
  std::size_t threads = 0;        // 0 reads M3ATT_THREADS, default 1
  // Runs only the variants whose key passes; empty keeps all.
  std::function<bool(const std::string&)> filter;
};

std::size_t worker_threads_from_env();

struct AblationResult {
  Suite suite = Suite::kTable2;
  std::vector<VariantSummary> rows;

  const VariantSummary* find(const std::string& key) const;
  // Plain-text table mirroring the row structure of the suite.
  std::string table() const;
};

AblationResult run_ablation(const AblationOptions& options, const Dataset& dataset,
                            std::ostream* log = nullptr);

// Trains a vision-queries-language baseline for a few epochs and reports
// whether its training loss ever fell below the untrained loss.
struct DivergenceProbe {
  double initial_loss = 0.0;
  std::vector<double> epoch_losses;
  bool dropped_below_initial = false;
};

DivergenceProbe run_val_probe(TrainConfig config, const Dataset& dataset,
                              std::size_t epochs = 10);

}  // namespace m3att
