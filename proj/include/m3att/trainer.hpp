#pragma once

// Minibatch Adam training, evaluation and the training configuration.

#include "m3att/metrics.hpp"
#include "m3att/model.hpp"
#include "m3att/synthetic.hpp"

#include <filesystem>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace m3att {

enum class Schedule { kConstant, kStep };

struct TrainConfig {
  ModelConfig model = ModelConfig::toy();
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  Schedule schedule = Schedule::kStep;
  double decay = 0.1;      // multiplier applied by the step schedule
  double decay_at = 0.8;   // fraction of epochs after which it applies
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;  // data order; the model seed lives in model.seed
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  std::size_t checkpoint_every = 0;  // epochs; 0 keeps only the final checkpoint
  bool eval_every_epoch = true;

  void validate() const;
  double lr_at(std::size_t epoch) const;
  // Model keys are forwarded to ModelConfig; returns keys neither recognizes.
  std::vector<std::string> apply(const std::map<std::string, std::string>& kv);
  std::string serialize() const;
  static TrainConfig from_file(const std::filesystem::path& path);
};

class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(const std::string& what, std::size_t epoch, std::size_t batch)
      : std::runtime_error(what), epoch_(epoch), batch_(batch) {}
  std::size_t epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
};

class Adam {
 public:
  Adam(const ParamRegistry& registry, double lr, double beta1, double beta2, double eps);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  std::size_t steps() const { return t_; }
  // Parameters without a gradient this step are left untouched.
  void step();

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

Batch make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices,
                 const ModelConfig& config);

// Forward-only pass in inference mode; predictions binarized at 0.5.
EvalReport evaluate(const Model& model, const std::vector<Sample>& samples,
                    std::size_t batch_size = 32);

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;  // means over the epoch's batches
  double mask = 0.0;
  double rec = 0.0;
  double val_iou = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  EvalReport val;
  double initial_loss = 0.0;  // mean training loss before any update
  double seconds = 0.0;
  std::filesystem::path checkpoint;
};

// Trains on dataset.train and evaluates on dataset.val. With a nonempty
// out_dir, writes config.txt, train_log.tsv, checkpoints and eval.txt there.
TrainResult train(const TrainConfig& config, const Dataset& dataset, std::ostream* log = nullptr);

// Mean total loss over the samples in inference mode.
double mean_loss(const Model& model, const std::vector<Sample>& samples,
                 std::size_t batch_size = 32);

}  // namespace m3att
