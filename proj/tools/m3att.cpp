// m3att: data generation, training, evaluation, ablations and attention dumps.

#include "m3att/ablation.hpp"
#include "m3att/attention_dump.hpp"
#include "m3att/config.hpp"
#include "m3att/synthetic.hpp"
#include "m3att/trainer.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

namespace {

using namespace m3att;

int cmd_gen_data(const DatasetOptions& opts, const std::string& out) {
  const auto manifest = generate_dataset(opts, out);
  std::cout << manifest.string() << '\n';
  return 0;
}

struct TrainFlags {
  std::string config;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::vector<std::string> overrides;
};

TrainConfig resolve_train_config(const TrainFlags& f) {
  TrainConfig cfg;
  std::map<std::string, std::string> kv;
  if (!f.config.empty()) kv = read_key_values(f.config);
  for (const auto& o : f.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
    kv[o.substr(0, eq)] = o.substr(eq + 1);
  }
  const auto unknown = cfg.apply(kv);
  if (!unknown.empty()) throw ConfigError("unknown config key '" + unknown.front() + "'");
  if (f.seed) {
    cfg.seed = *f.seed;
    cfg.model.seed = *f.seed;
  }
  if (f.epochs) cfg.epochs = *f.epochs;
  if (!f.data.empty()) cfg.data_dir = f.data;
  if (!f.out.empty()) cfg.out_dir = f.out;
  if (cfg.data_dir.empty()) throw ConfigError("no data directory (pass --data or set data=)");
  cfg.validate();
  return cfg;
}

int cmd_train(const TrainFlags& f) {
  TrainConfig cfg = resolve_train_config(f);
  if (cfg.out_dir.empty()) throw ConfigError("no output directory (pass --out or set out=)");
  const Dataset data = load_dataset(cfg.data_dir);
  const TrainResult r = train(cfg, data, &std::cout);
  std::cout << r.val.to_text() << "checkpoint=" << r.checkpoint.string() << '\n';
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& split,
             const std::string& ledger, const std::string& out) {
  const Model model = Model::load(checkpoint);
  const Dataset data = load_dataset(data_dir);
  const EvalReport report = evaluate(model, data.split(split));
  std::cout << "split=" << split << '\n' << report.to_text();
  if (!out.empty()) {
    std::ofstream f(out, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + out);
    f << "split=" << split << '\n' << report.to_text();
  }
  if (!ledger.empty())
    append_ledger_row(ledger, {"eval", checkpoint, model.config().seed, report, 0.0});
  return 0;
}

int cmd_ablate(const std::string& suite, std::size_t seeds, const TrainFlags& f) {
  AblationOptions opts;
  opts.suite = parse_suite(suite);
  opts.seeds = seeds;
  opts.train = resolve_train_config(f);
  opts.out_dir = opts.train.out_dir;
  if (opts.out_dir.empty()) throw ConfigError("no output directory (pass --out)");
  const Dataset data = load_dataset(opts.train.data_dir);
  const AblationResult r = run_ablation(opts, data, &std::cout);
  std::cout << r.table();
  return 0;
}

int cmd_dump_attn(const std::string& checkpoint, const std::string& data_dir,
                  std::size_t sample_id, const std::string& out) {
  const Model model = Model::load(checkpoint);
  const Dataset data = load_dataset(data_dir);
  const Sample* sample = nullptr;
  for (const auto* split : {&data.train, &data.val})
    for (const auto& s : *split)
      if (s.id == sample_id) sample = &s;
  if (!sample) throw std::runtime_error("sample " + std::to_string(sample_id) + " not found");
  const AttentionDump dump = collect_attention(model, *sample);
  write_attention_dump(dump, out);
  std::cout << "expression=" << sample->expression << '\n';
  for (const auto& r : dump.raw.records) std::cout << r.name << ' ' << shape_str(r.shape) << '\n';
  return 0;
}

void add_train_flags(CLI::App* cmd, TrainFlags& f, bool require_data) {
  cmd->add_option("--config", f.config, "key=value config file")->check(CLI::ExistingFile);
  auto* data = cmd->add_option("--data", f.data, "dataset directory");
  if (require_data) data->required();
  cmd->add_option("--out", f.out, "output directory")->required();
  cmd->add_option("--seed", f.seed, "model and data-order seed");
  cmd->add_option("--epochs", f.epochs, "number of epochs");
  cmd->add_option("--set", f.overrides, "config override key=value (repeatable)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"M3Att referring segmentation at desk scale"};
  app.require_subcommand(1);

  DatasetOptions gen;
  std::string gen_out;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate the synthetic dataset");
  gen_cmd->add_option("--n", gen.n, "number of samples")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--size", gen.canvas, "canvas size in pixels");
  gen_cmd->add_option("--seed", gen.seed, "generation seed");
  gen_cmd->add_option("--tokens", gen.tokens, "padded expression length");
  gen_cmd->add_option("--out", gen_out, "output directory")->required();
  gen_cmd->add_flag("--force", gen.force, "overwrite an existing directory");

  TrainFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  add_train_flags(train_cmd, train_flags, false);

  std::string checkpoint, data_dir, split = "val", ledger, report_out;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--data", data_dir, "dataset directory")->required();
  eval_cmd->add_option("--split", split, "train or val")->check(CLI::IsMember({"train", "val"}));
  eval_cmd->add_option("--ledger", ledger, "results ledger to append to");
  eval_cmd->add_option("--out", report_out, "report file");

  std::string suite;
  std::size_t seeds = 3;
  TrainFlags ablate_flags;
  auto* ablate_cmd = app.add_subcommand("ablate", "run an ablation suite");
  ablate_cmd->add_option("--suite", suite, "table1 or table2")
      ->required()
      ->check(CLI::IsMember({"table1", "table2"}));
  ablate_cmd->add_option("--seeds", seeds, "seeds per configuration")->check(CLI::PositiveNumber);
  add_train_flags(ablate_cmd, ablate_flags, true);

  std::size_t sample_id = 0;
  std::string dump_out;
  auto* dump_cmd = app.add_subcommand("dump-attn", "write attention maps for one sample");
  dump_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  dump_cmd->add_option("--data", data_dir, "dataset directory")->required();
  dump_cmd->add_option("--sample", sample_id, "sample id")->required();
  dump_cmd->add_option("--out", dump_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen, gen_out);
    if (*train_cmd) return cmd_train(train_flags);
    if (*eval_cmd) return cmd_eval(checkpoint, data_dir, split, ledger, report_out);
    if (*ablate_cmd) return cmd_ablate(suite, seeds, ablate_flags);
    if (*dump_cmd) return cmd_dump_attn(checkpoint, data_dir, sample_id, dump_out);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
