#include "m3att/ablation.hpp"
#include "m3att/attention_dump.hpp"
#include "m3att/archive.hpp"
#include "m3att/config.hpp"
#include "m3att/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace m3att;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("m3att_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// A handful of 16x16 samples; enough to exercise the loop, not to learn.
Dataset small_dataset(std::size_t n = 24) {
  Dataset d;
  d.canvas = 16;
  d.tokens = 8;
  d.seed = 7;
  const auto split = validation_split(n);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s = generate_sample(7, i, 16, 8);
    s.val = split[i];
    (s.val ? d.val : d.train).push_back(std::move(s));
  }
  return d;
}

TrainConfig small_config() {
  TrainConfig c;
  c.model.width = 16;
  c.model.mask_channels = 4;
  c.model.heads = 2;
  c.model.image_size = 16;
  c.model.encoder_layers = 1;
  c.model.decoder_layers = 2;
  c.epochs = 2;
  c.batch_size = 8;
  return c;
}

}  // namespace

TEST(Adam, MatchesHandComputedUpdates) {
  ParamRegistry reg;
  Tensor w = Tensor::from({2}, {1.0, -2.0}, true);
  reg.add_param("w", w);
  Adam opt(reg, 0.1, 0.9, 0.999, 1e-8);
  double m[2] = {0, 0}, v[2] = {0, 0}, ref[2] = {1.0, -2.0};
  for (int t = 1; t <= 3; ++t) {
    reg.zero_grad();
    sum(mul(mul(w, w), Tensor::from({2}, {1.0, 3.0}))).backward();  // grad = 2 * k * w
    const double k[2] = {1.0, 3.0};
    for (int i = 0; i < 2; ++i) {
      const double g = 2.0 * k[i] * ref[i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1.0 - std::pow(0.9, t));
      const double vh = v[i] / (1.0 - std::pow(0.999, t));
      ref[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    }
    opt.step();
    EXPECT_NEAR(w.data()[0], ref[0], 1e-15);
    EXPECT_NEAR(w.data()[1], ref[1], 1e-15);
  }
  EXPECT_EQ(opt.steps(), 3u);
}

TEST(Adam, SkipsParametersWithoutGradient) {
  ParamRegistry reg;
  Tensor a = Tensor::from({1}, {1.0}, true), b = Tensor::from({1}, {5.0}, true);
  reg.add_param("a", a);
  reg.add_param("b", b);
  Adam opt(reg, 0.1, 0.9, 0.999, 1e-8);
  reg.zero_grad();
  sum(mul(a, a)).backward();
  opt.step();
  EXPECT_NE(a.data()[0], 1.0);
  EXPECT_EQ(b.data()[0], 5.0);
}

TEST(TrainConfig, ScheduleDecaysAtEightyPercent) {
  TrainConfig c;
  c.epochs = 30;
  EXPECT_EQ(c.lr_at(0), 1e-3);
  EXPECT_EQ(c.lr_at(23), 1e-3);
  EXPECT_DOUBLE_EQ(c.lr_at(24), 1e-4);
  EXPECT_DOUBLE_EQ(c.lr_at(29), 1e-4);
  c.schedule = Schedule::kConstant;
  EXPECT_EQ(c.lr_at(29), 1e-3);
}

TEST(TrainConfig, DefaultsAndValidation) {
  const TrainConfig c;
  EXPECT_EQ(c.lr, 1e-3);
  EXPECT_EQ(c.beta1, 0.9);
  EXPECT_EQ(c.beta2, 0.999);
  EXPECT_EQ(c.adam_eps, 1e-8);
  EXPECT_EQ(c.epochs, 30u);
  auto bad = [](auto edit) {
    TrainConfig t;
    edit(t);
    EXPECT_THROW(t.validate(), ConfigError);
  };
  bad([](TrainConfig& t) { t.lr = 0.0; });
  bad([](TrainConfig& t) { t.batch_size = 0; });
  bad([](TrainConfig& t) { t.beta2 = 1.0; });
}

TEST(TrainConfig, FileParsingForwardsModelKeys) {
  const fs::path dir = temp_dir("cfg");
  fs::create_directories(dir);
  std::ofstream(dir / "a.cfg") << "# comment\nepochs = 5\nlr=0.005\nwidth=16\nimi=imi_star\n";
  const TrainConfig c = TrainConfig::from_file(dir / "a.cfg");
  EXPECT_EQ(c.epochs, 5u);
  EXPECT_EQ(c.lr, 0.005);
  EXPECT_EQ(c.model.width, 16u);
  EXPECT_EQ(c.model.imi, ImiMode::kStar);
  std::ofstream(dir / "b.cfg") << "epochs=5\nnonsense=1\n";
  EXPECT_THROW(TrainConfig::from_file(dir / "b.cfg"), ConfigError);
  std::ofstream(dir / "c.cfg") << "epochs 5\n";
  EXPECT_THROW(TrainConfig::from_file(dir / "c.cfg"), ConfigError);
  EXPECT_THROW(TrainConfig::from_file(dir / "absent.cfg"), ConfigError);
  TrainConfig round;
  EXPECT_TRUE(round.apply(read_key_values(dir / "a.cfg")).empty());
}

TEST(Train, ZeroEpochsWritesInitialCheckpointAndEval) {
  const fs::path out = temp_dir("train0");
  TrainConfig c = small_config();
  c.epochs = 0;
  c.out_dir = out;
  const Dataset d = small_dataset();
  const TrainResult r = train(c, d);
  EXPECT_TRUE(r.epochs.empty());
  EXPECT_TRUE(fs::exists(out / "final.m3at"));
  EXPECT_TRUE(fs::exists(out / "eval.txt"));
  EXPECT_EQ(r.val.count, d.val.size());
  // The saved model is the initial one.
  const Model fresh(c.model);
  const Model loaded = Model::load(out / "final.m3at", c.model.hash());
  for (std::size_t i = 0; i < fresh.registry().params().size(); ++i)
    EXPECT_EQ(fresh.registry().params()[i].tensor.to_vector(),
              loaded.registry().params()[i].tensor.to_vector());
}

TEST(Train, DeterministicCheckpointsAndMetrics) {
  const Dataset d = small_dataset();
  TrainConfig c = small_config();
  c.checkpoint_every = 1;
  const fs::path a = temp_dir("det_a"), b = temp_dir("det_b"), other = temp_dir("det_c");
  c.out_dir = a;
  const TrainResult ra = train(c, d);
  c.out_dir = b;
  const TrainResult rb = train(c, d);
  for (const char* f : {"final.m3at", "checkpoint_epoch001.m3at", "eval.txt", "config.txt"})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  EXPECT_EQ(ra.val.ious, rb.val.ious);
  c.seed = 1;
  c.out_dir = other;
  train(c, d);
  EXPECT_NE(slurp(a / "final.m3at"), slurp(other / "final.m3at"));
}

TEST(Train, LogsEveryEpochAndLossDrops) {
  const Dataset d = small_dataset(40);
  TrainConfig c = small_config();
  c.epochs = 4;
  c.out_dir = temp_dir("log");
  const TrainResult r = train(c, d);
  ASSERT_EQ(r.epochs.size(), 4u);
  EXPECT_LT(r.epochs.back().loss, r.initial_loss);
  for (const auto& e : r.epochs) {
    EXPECT_TRUE(std::isfinite(e.loss));
    EXPECT_GT(e.rec, 0.0);
    EXPECT_NEAR(e.loss, e.mask + 0.1 * e.rec, 1e-9);
  }
  std::ifstream in(c.out_dir / "train_log.tsv");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 5u);
}

TEST(Train, NonFiniteLossAbortsWithBatchDiagnostic) {
  const Dataset d = small_dataset();
  TrainConfig c = small_config();
  c.lr = 1e200;
  c.epochs = 3;
  try {
    train(c, d);
    FAIL() << "expected NonFiniteLossError";
  } catch (const NonFiniteLossError& e) {
    EXPECT_NE(std::string(e.what()).find("samples"), std::string::npos);
    EXPECT_GE(e.epoch(), 1u);
  }
}

TEST(Evaluate, CountsSamplesAndIgnoresBatching) {
  const Dataset d = small_dataset();
  const Model m(small_config().model);
  const EvalReport r = evaluate(m, d.train, 5);
  EXPECT_EQ(r.count, d.train.size());
  for (std::size_t i = 1; i < r.precision.size(); ++i) EXPECT_LE(r.precision[i], r.precision[i - 1]);
  // Batching does not change the result in inference mode.
  EXPECT_EQ(evaluate(m, d.train, 32).ious, r.ious);
}

TEST(Ablation, SuitesMirrorTableRows) {
  const ModelConfig base = ModelConfig::toy();
  const auto t2 = suite_variants(Suite::kTable2, base);
  ASSERT_EQ(t2.size(), 5u);
  EXPECT_EQ(t2[0].model.baseline, FusionKind::kGenericLav);
  EXPECT_EQ(t2[1].model.imi, ImiMode::kOff);
  EXPECT_FALSE(t2[1].model.lfr);
  EXPECT_EQ(t2[2].model.imi, ImiMode::kFull);
  EXPECT_FALSE(t2[2].model.lfr);
  EXPECT_EQ(t2[3].model.imi, ImiMode::kStar);
  EXPECT_EQ(t2[4].model.imi, ImiMode::kFull);
  EXPECT_TRUE(t2[4].model.lfr);
  const auto t1 = suite_variants(Suite::kTable1, base);
  ASSERT_EQ(t1.size(), 12u);
  EXPECT_EQ(t1[2].key, "shared_l3");
  EXPECT_EQ(t1[2].model.decoder_layers, 3u);
  EXPECT_EQ(t1[5].model.sharing, AttentionSharing::kIndependent);
  EXPECT_EQ(t1[11].model.baseline, FusionKind::kGenericLav);
  EXPECT_EQ(parse_suite("table1"), Suite::kTable1);
  EXPECT_THROW(parse_suite("table3"), ConfigError);
}

TEST(Ablation, SingleSeedRunWritesLedgerAndTable) {
  const Dataset d = small_dataset();
  AblationOptions o;
  o.suite = Suite::kTable2;
  o.seeds = 1;
  o.train = small_config();
  o.train.epochs = 1;
  o.out_dir = temp_dir("ablate");
  o.threads = 1;
  o.filter = [](const std::string& k) { return k == "m3att" || k == "full"; };
  const AblationResult r = run_ablation(o, d);
  ASSERT_EQ(r.rows.size(), 2u);
  EXPECT_EQ(r.find("full")->runs.size(), 1u);
  EXPECT_EQ(r.find("imi"), nullptr);
  EXPECT_EQ(r.find("full")->std_iou, 0.0);
  const std::string table = slurp(o.out_dir / "table.txt");
  EXPECT_NE(table.find("#1 Baseline (M3Att)"), std::string::npos);
  EXPECT_NE(table.find("#4 Ours"), std::string::npos);
  std::ifstream in(o.out_dir / "results.tsv");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) rows += !line.empty();
  EXPECT_EQ(rows, 2u);
}

TEST(Ablation, ThreadsFromEnvironment) {
  ::setenv("M3ATT_THREADS", "3", 1);
  EXPECT_EQ(worker_threads_from_env(), 3u);
  ::setenv("M3ATT_THREADS", "zero", 1);
  EXPECT_THROW(worker_threads_from_env(), ConfigError);
  ::unsetenv("M3ATT_THREADS");
  EXPECT_EQ(worker_threads_from_env(), 1u);
}

TEST(AttentionDump, HeatmapShapesAndRawRoundTrip) {
  const Dataset d = small_dataset();
  ModelConfig mc = small_config().model;
  mc.sharing = AttentionSharing::kIndependent;
  const Model m(mc);
  const AttentionDump dump = collect_attention(m, d.train[0]);
  const fs::path out = temp_dir("dump");
  write_attention_dump(dump, out);
  const std::size_t n = mc.tokens, hw = mc.spatial();
  const TensorRecord* amut = dump.raw.find("layer0.a_mut");
  ASSERT_NE(amut, nullptr);
  EXPECT_EQ(amut->shape, (Shape{n, hw}));
  ASSERT_NE(dump.raw.find("layer0.a_mut_val"), nullptr);
  ASSERT_NE(dump.raw.find("imi0.a_l"), nullptr);
  const Archive back = read_archive(out / "attention.m3at");
  ASSERT_EQ(back.records.size(), dump.raw.records.size());
  for (std::size_t i = 0; i < back.records.size(); ++i)
    EXPECT_EQ(back.records[i].values, dump.raw.records[i].values);
  const TensorRecord* lav = back.find("layer1.lav");
  ASSERT_NE(lav, nullptr);
  for (std::size_t r = 0; r < lav->shape[0]; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < lav->shape[1]; ++j) s += lav->values[r * lav->shape[1] + j];
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
  bool found = false;
  for (const auto& h : dump.heatmaps)
    if (h.name == "layer0.a_mut") {
      found = true;
      EXPECT_EQ(h.raster.width, hw);
      EXPECT_EQ(h.raster.height, n);
    }
  EXPECT_TRUE(found);
}
