#include "m3att/trainer.hpp"

#include "m3att/config.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace m3att {

void TrainConfig::validate() const {
  model.validate();
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(decay > 0.0)) throw ConfigError("decay must be positive");
  if (!(decay_at >= 0.0 && decay_at <= 1.0)) throw ConfigError("decay_at must lie in [0,1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0,1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
}

double TrainConfig::lr_at(std::size_t epoch) const {
  if (schedule == Schedule::kConstant) return lr;
  const auto boundary = static_cast<std::size_t>(std::floor(decay_at * static_cast<double>(epochs)));
  return epoch >= boundary ? lr * decay : lr;
}

std::vector<std::string> TrainConfig::apply(const std::map<std::string, std::string>& kv) {
  std::map<std::string, std::string> rest;
  for (const auto& [k, v] : kv) {
    if (k == "epochs") epochs = static_cast<std::size_t>(std::max(0LL, parse_integer(k, v)));
    else if (k == "batch_size") batch_size = static_cast<std::size_t>(std::max(0LL, parse_integer(k, v)));
    else if (k == "lr") lr = parse_real(k, v);
    else if (k == "schedule") {
      if (v == "constant") schedule = Schedule::kConstant;
      else if (v == "step") schedule = Schedule::kStep;
      else throw ConfigError("schedule: unknown value '" + v + "'");
    } else if (k == "decay") decay = parse_real(k, v);
    else if (k == "decay_at") decay_at = parse_real(k, v);
    else if (k == "beta1") beta1 = parse_real(k, v);
    else if (k == "beta2") beta2 = parse_real(k, v);
    else if (k == "adam_eps") adam_eps = parse_real(k, v);
    else if (k == "train_seed") seed = static_cast<std::uint64_t>(parse_integer(k, v));
    else if (k == "data") data_dir = v;
    else if (k == "out") out_dir = v;
    else if (k == "checkpoint_every")
      checkpoint_every = static_cast<std::size_t>(std::max(0LL, parse_integer(k, v)));
    else if (k == "eval_every_epoch") eval_every_epoch = parse_bool(k, v);
    else rest[k] = v;
  }
  return model.apply(rest);
}

std::string TrainConfig::serialize() const {
  std::ostringstream os;
  os.precision(17);
  os << model.serialize() << "epochs=" << epochs << '\n'
     << "batch_size=" << batch_size << '\n'
     << "lr=" << lr << '\n'
     << "schedule=" << (schedule == Schedule::kStep ? "step" : "constant") << '\n'
     << "decay=" << decay << '\n'
     << "decay_at=" << decay_at << '\n'
     << "beta1=" << beta1 << '\n'
     << "beta2=" << beta2 << '\n'
     << "adam_eps=" << adam_eps << '\n'
     << "train_seed=" << seed << '\n'
     << "checkpoint_every=" << checkpoint_every << '\n'
     << "eval_every_epoch=" << (eval_every_epoch ? "true" : "false") << '\n';
  return os.str();
}

TrainConfig TrainConfig::from_file(const std::filesystem::path& path) {
  TrainConfig cfg;
  const auto unknown = cfg.apply(read_key_values(path));
  if (!unknown.empty())
    throw ConfigError(path.string() + ": unknown key '" + unknown.front() + "'");
  cfg.validate();
  return cfg;
}

// ---- Adam ------------------------------------------------------------------

Adam::Adam(const ParamRegistry& registry, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : registry.params()) {
    params_.push_back(p.tensor);
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      w[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

// ---- batches and evaluation --------------------------------------------------

Batch make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices,
                 const ModelConfig& config) {
  const std::size_t b = indices.size();
  const std::size_t s = config.image_size;
  const std::size_t n = config.tokens;
  std::vector<double> images;
  std::vector<double> masks;
  images.reserve(b * 3 * s * s);
  masks.reserve(b * s * s);
  TokenBatch tokens{b, n, {}};
  tokens.ids.reserve(b * n);
  for (std::size_t i : indices) {
    const Sample& smp = samples.at(i);
    if (smp.image.size() != 3 * s * s || smp.mask.size() != s * s)
      throw DimensionError("sample " + std::to_string(smp.id) + " does not match image size " +
                           std::to_string(s));
    if (smp.tokens.size() != n)
      throw DimensionError("sample " + std::to_string(smp.id) + " has " +
                           std::to_string(smp.tokens.size()) + " tokens, model expects " +
                           std::to_string(n));
    images.insert(images.end(), smp.image.begin(), smp.image.end());
    for (auto m : smp.mask) masks.push_back(m ? 1.0 : 0.0);
    tokens.ids.insert(tokens.ids.end(), smp.tokens.begin(), smp.tokens.end());
  }
  return {Tensor::from({b, 3, s, s}, std::move(images)), std::move(tokens),
          Tensor::from({b, 1, s, s}, std::move(masks))};
}

namespace {

std::vector<std::vector<std::size_t>> chunks(std::vector<std::size_t> order, std::size_t size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += size)
    out.emplace_back(order.begin() + static_cast<long>(i),
                     order.begin() + static_cast<long>(std::min(order.size(), i + size)));
  return out;
}

std::vector<std::size_t> iota_order(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.next() % i]);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

EvalReport evaluate(const Model& model, const std::vector<Sample>& samples,
                    std::size_t batch_size) {
  NoGradGuard no_grad;
  std::vector<double> ious;
  ious.reserve(samples.size());
  const std::size_t pixels = model.config().image_size * model.config().image_size;
  for (const auto& idx : chunks(iota_order(samples.size()), batch_size)) {
    const Batch batch = make_batch(samples, idx, model.config());
    const Tensor mask = model.forward(batch.images, batch.tokens, false, false).mask;
    const auto probs = mask.data();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      std::vector<double> p(probs.begin() + static_cast<long>(k * pixels),
                            probs.begin() + static_cast<long>((k + 1) * pixels));
      ious.push_back(iou(binarize(p), samples[idx[k]].mask));
    }
  }
  return EvalReport::from_ious(std::move(ious));
}

double mean_loss(const Model& model, const std::vector<Sample>& samples, std::size_t batch_size) {
  NoGradGuard no_grad;
  double total = 0.0;
  for (const auto& idx : chunks(iota_order(samples.size()), batch_size)) {
    const Batch batch = make_batch(samples, idx, model.config());
    total += forward_loss(model, batch, false).loss.loss * static_cast<double>(idx.size());
  }
  return samples.empty() ? 0.0 : total / static_cast<double>(samples.size());
}

// ---- training loop -------------------------------------------------------------

namespace {

// Mean training-mode loss of a freshly initialized model, before any update.
double untrained_loss(const TrainConfig& config, const std::vector<Sample>& samples) {
  Model probe(config.model);
  NoGradGuard no_grad;
  double total = 0.0;
  for (const auto& idx : chunks(iota_order(samples.size()), config.batch_size)) {
    const Batch batch = make_batch(samples, idx, config.model);
    total += forward_loss(probe, batch, true).loss.loss * static_cast<double>(idx.size());
  }
  return total / static_cast<double>(samples.size());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string checkpoint_name(std::size_t epoch) {
  std::string n = std::to_string(epoch);
  return "checkpoint_epoch" + std::string(n.size() < 3 ? 3 - n.size() : 0, '0') + n + ".m3at";
}

}  // namespace

TrainResult train(const TrainConfig& config, const Dataset& dataset, std::ostream* log) {
  config.validate();
  if (dataset.train.empty()) throw std::runtime_error("training split is empty");
  const auto t0 = std::chrono::steady_clock::now();
  const bool write = !config.out_dir.empty();
  if (write) {
    std::filesystem::create_directories(config.out_dir);
    write_text(config.out_dir / "config.txt", config.serialize());
  }

  Model model(config.model);
  Adam adam(model.registry(), config.lr, config.beta1, config.beta2, config.adam_eps);
  TrainResult result;
  result.initial_loss = untrained_loss(config, dataset.train);

  std::ofstream log_file;
  if (write) {
    log_file.open(config.out_dir / "train_log.tsv", std::ios::trunc);
    log_file << "epoch\tlr\tloss\tmask\trec\tval_iou\tseconds\n";
    log_file.precision(6);
    log_file << std::fixed;
  }

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto te = std::chrono::steady_clock::now();
    adam.set_lr(config.lr_at(epoch));
    std::vector<std::size_t> order = iota_order(dataset.train.size());
    Rng rng(config.seed, "shuffle/" + std::to_string(epoch));
    shuffle(order, rng);

    EpochLog e;
    e.epoch = epoch + 1;
    e.lr = adam.lr();
    std::size_t seen = 0;
    const auto batches = chunks(std::move(order), config.batch_size);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const Batch batch = make_batch(dataset.train, batches[bi], config.model);
      model.registry().zero_grad();
      ForwardLoss fl = forward_loss(model, batch, true);
      if (!std::isfinite(fl.loss.loss)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << e.epoch << " batch " << bi << " (samples";
        for (std::size_t i : batches[bi]) msg << ' ' << dataset.train[i].id;
        msg << "): L=" << fl.loss.loss << " L_mask=" << fl.loss.mask << " L_rec=" << fl.loss.rec;
        throw NonFiniteLossError(msg.str(), e.epoch, bi);
      }
      fl.loss.total.backward();
      adam.step();
      const double w = static_cast<double>(batches[bi].size());
      e.loss += fl.loss.loss * w;
      e.mask += fl.loss.mask * w;
      e.rec += fl.loss.rec * w;
      seen += batches[bi].size();
    }
    e.loss /= static_cast<double>(seen);
    e.mask /= static_cast<double>(seen);
    e.rec /= static_cast<double>(seen);
    const bool last = epoch + 1 == config.epochs;
    if ((config.eval_every_epoch || last) && !dataset.val.empty())
      e.val_iou = evaluate(model, dataset.val).mean_iou;
    e.seconds = seconds_since(te);
    result.epochs.push_back(e);
    if (log) {
      log->precision(4);
      *log << std::fixed << "epoch " << e.epoch << " lr=" << e.lr << " L=" << e.loss
           << " L_mask=" << e.mask << " L_rec=" << e.rec << " val_iou=" << e.val_iou << " ("
           << e.seconds << "s)\n"
           << std::flush;
    }
    if (write) {
      log_file << e.epoch << '\t' << e.lr << '\t' << e.loss << '\t' << e.mask << '\t' << e.rec
               << '\t' << e.val_iou << '\t' << e.seconds << '\n'
               << std::flush;
      if (config.checkpoint_every && e.epoch % config.checkpoint_every == 0 && !last)
        model.save(config.out_dir / checkpoint_name(e.epoch));
    }
  }

  result.val = dataset.val.empty() ? EvalReport{} : evaluate(model, dataset.val);
  result.seconds = seconds_since(t0);
  if (write) {
    result.checkpoint = config.out_dir / "final.m3at";
    model.save(result.checkpoint);
    write_text(config.out_dir / "eval.txt", result.val.to_text());
  }
  return result;
}

}  // namespace m3att
