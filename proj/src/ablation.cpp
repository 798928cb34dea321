#include "m3att/ablation.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

namespace m3att {

Suite parse_suite(std::string_view text) {
  if (text == "table1") return Suite::kTable1;
  if (text == "table2") return Suite::kTable2;
  throw ConfigError("unknown suite '" + std::string(text) + "' (expected table1 or table2)");
}

std::string_view to_string(Suite suite) {
  return suite == Suite::kTable1 ? "table1" : "table2";
}

std::vector<AblationVariant> suite_variants(Suite suite, const ModelConfig& base) {
  std::vector<AblationVariant> out;
  if (suite == Suite::kTable1) {
    struct Mode {
      const char* label;
      const char* key;
      FusionKind fusion;
      AttentionSharing sharing;
    };
    const Mode modes[] = {
        {"Shared", "shared", FusionKind::kMutual, AttentionSharing::kShared},
        {"Independent", "independent", FusionKind::kMutual, AttentionSharing::kIndependent},
        {"Generic (LAV only)", "generic_lav", FusionKind::kGenericLav, AttentionSharing::kShared},
    };
    for (const auto& m : modes)
      for (std::size_t layers = 1; layers <= 4; ++layers) {
        ModelConfig c = base;
        c.baseline = m.fusion;
        c.sharing = m.sharing;
        c.decoder_layers = layers;
        c.imi = ImiMode::kFull;
        c.lfr = true;
        out.push_back({std::string(m.label) + " " + std::to_string(layers),
                       std::string(m.key) + "_l" + std::to_string(layers), c});
      }
    return out;
  }
  auto variant = [&](const char* label, const char* key, FusionKind fusion, ImiMode imi,
                     bool lfr) {
    ModelConfig c = base;
    c.baseline = fusion;
    c.sharing = AttentionSharing::kShared;
    c.imi = imi;
    c.lfr = lfr;
    out.push_back({label, key, c});
  };
  variant("#0 Baseline (Generic LAV)", "generic_lav", FusionKind::kGenericLav, ImiMode::kOff,
          false);
  variant("#1 Baseline (M3Att)", "m3att", FusionKind::kMutual, ImiMode::kOff, false);
  variant("#2 Baseline + IMI", "imi", FusionKind::kMutual, ImiMode::kFull, false);
  variant("#3 Baseline + IMI*", "imi_star", FusionKind::kMutual, ImiMode::kStar, false);
  variant("#4 Ours", "full", FusionKind::kMutual, ImiMode::kFull, true);
  return out;
}

std::size_t worker_threads_from_env() {
  const char* env = std::getenv("M3ATT_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError("M3ATT_THREADS must be a positive integer");
  return static_cast<std::size_t>(v);
}

const VariantSummary* AblationResult::find(const std::string& key) const {
  for (const auto& r : rows)
    if (r.variant.key == key) return &r;
  return nullptr;
}

std::string AblationResult::table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << (suite == Suite::kTable1 ? "Ablation of decoder depth" : "Ablation of components")
     << " (val, mean +- std over seeds, percent)\n";
  std::size_t width = 8;
  for (const auto& r : rows) width = std::max(width, r.variant.label.size());
  os << std::left << std::setw(static_cast<int>(width)) << "Model" << "  " << std::right
     << std::setw(15) << "IoU" << "  " << std::setw(15) << "Pr@0.5" << "  seeds\n";
  for (const auto& r : rows) {
    std::ostringstream iou_s, pr_s;
    iou_s << std::fixed << std::setprecision(2) << 100.0 * r.mean_iou << " +- "
          << 100.0 * r.std_iou;
    pr_s << std::fixed << std::setprecision(2) << 100.0 * r.mean_pr50 << " +- "
         << 100.0 * r.std_pr50;
    os << std::left << std::setw(static_cast<int>(width)) << r.variant.label << "  "
       << std::right << std::setw(15) << iou_s.str() << "  " << std::setw(15) << pr_s.str()
       << "  " << r.runs.size() << '\n';
  }
  return os.str();
}

namespace {

void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  mean = 0.0;
  sd = 0.0;
  if (v.empty()) return;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  for (double x : v) sd += (x - mean) * (x - mean);
  sd = std::sqrt(sd / static_cast<double>(v.size()));
}

}  // namespace

AblationResult run_ablation(const AblationOptions& options, const Dataset& dataset,
                            std::ostream* log) {
  if (options.seeds == 0) throw ConfigError("seeds must be at least 1");
  AblationResult result;
  result.suite = options.suite;
  for (auto& v : suite_variants(options.suite, options.train.model))
    if (!options.filter || options.filter(v.key)) result.rows.push_back({v, {}, 0, 0, 0, 0});

  struct Job {
    std::size_t row;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t r = 0; r < result.rows.size(); ++r)
    for (std::size_t s = 0; s < options.seeds; ++s) jobs.push_back({r, options.first_seed + s});
  for (auto& row : result.rows) row.runs.resize(options.seeds);

  if (!options.out_dir.empty()) std::filesystem::create_directories(options.out_dir);
  const auto ledger = options.out_dir.empty() ? std::filesystem::path{}
                                              : options.out_dir / "results.tsv";
  std::mutex mu;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;

  auto worker = [&] {
    for (;;) {
      const std::size_t j = next.fetch_add(1);
      if (j >= jobs.size()) return;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (failure) return;
      }
      const Job job = jobs[j];
      const auto& variant = result.rows[job.row].variant;
      try {
        TrainConfig tc = options.train;
        tc.model = variant.model;
        tc.model.seed = job.seed;
        tc.seed = job.seed;
        tc.eval_every_epoch = false;
        tc.out_dir = options.out_dir.empty()
                         ? std::filesystem::path{}
                         : options.out_dir / (variant.key + "_seed" + std::to_string(job.seed));
        const TrainResult tr = train(tc, dataset, nullptr);
        RunRecord rec{variant.key, job.seed, tr.val, tr.initial_loss, tr.epochs, tr.seconds};
        std::lock_guard<std::mutex> lock(mu);
        if (!ledger.empty())
          append_ledger_row(ledger, {std::string(to_string(options.suite)), variant.key, job.seed,
                                     tr.val, tr.seconds});
        if (log)
          *log << std::fixed << std::setprecision(4) << to_string(options.suite) << ' '
               << variant.key << " seed=" << job.seed << " iou=" << tr.val.mean_iou
               << " pr@0.5=" << tr.val.precision[0] << " (" << std::setprecision(1)
               << tr.seconds << "s)\n"
               << std::flush;
        result.rows[job.row].runs[job.seed - options.first_seed] = std::move(rec);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };

  const std::size_t threads =
      std::max<std::size_t>(1, options.threads ? options.threads : worker_threads_from_env());
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(threads, jobs.size()); ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  for (auto& row : result.rows) {
    std::vector<double> ious, prs;
    for (const auto& r : row.runs) {
      ious.push_back(r.report.mean_iou);
      prs.push_back(r.report.precision[0]);
    }
    mean_std(ious, row.mean_iou, row.std_iou);
    mean_std(prs, row.mean_pr50, row.std_pr50);
  }
  if (!options.out_dir.empty()) {
    std::ofstream out(options.out_dir / "table.txt", std::ios::trunc);
    out << result.table();
  }
  return result;
}

DivergenceProbe run_val_probe(TrainConfig config, const Dataset& dataset, std::size_t epochs) {
  config.model.baseline = FusionKind::kGenericVal;
  config.model.imi = ImiMode::kOff;
  config.model.lfr = false;
  config.epochs = epochs;
  config.eval_every_epoch = false;
  config.out_dir.clear();
  const TrainResult tr = train(config, dataset, nullptr);
  DivergenceProbe p;
  p.initial_loss = tr.initial_loss;
  for (const auto& e : tr.epochs) {
    p.epoch_losses.push_back(e.loss);
    if (e.loss < tr.initial_loss) p.dropped_below_initial = true;
  }
  return p;
}

}  // namespace m3att
