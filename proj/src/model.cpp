#include "m3att/model.hpp"

#include "m3att/archive.hpp"

#include <set>

namespace m3att {

ToyVisionBackbone::ToyVisionBackbone(std::size_t width, Rng& rng) {
  const ConvOptions opts{.activation = Activation::kRelu, .batch_norm = true};
  stage1_ = Conv2d(3, 16, 3, opts, rng);
  stage2_ = Conv2d(16, 32, 3, opts, rng);
  stage3_ = Conv2d(32, width, 3, opts, rng);
}

Tensor ToyVisionBackbone::forward(const Tensor& images, bool training) const {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) % 4 != 0 ||
      images.dim(3) % 4 != 0)
    throw DimensionError("backbone: expected [B,3,S,S] with S divisible by 4, got " +
                         shape_str(images.shape()));
  Tensor h = avg_pool2x(stage1_.forward(images, training));
  h = avg_pool2x(stage2_.forward(h, training));
  return stage3_.forward(h, training);
}

void ToyVisionBackbone::register_into(const std::string& prefix, ParamRegistry& reg) {
  stage1_.register_into(join_name(prefix, "stage1"), reg);
  stage2_.register_into(join_name(prefix, "stage2"), reg);
  stage3_.register_into(join_name(prefix, "stage3"), reg);
}

namespace {

const ModelConfig& checked(const ModelConfig& config) {
  config.validate();
  return config;
}

}  // namespace

Model::Model(const ModelConfig& config) : config_(checked(config)) {
  const auto seed = config_.seed;
  const std::size_t c = config_.width;
  {
    Rng rng(seed, "backbone");
    backbone_ = ToyVisionBackbone(c, rng);
  }
  {
    Rng rng(seed, "language");
    language_ = LanguageEncoder(config_.vocab, c, config_.pad_id, rng);
  }
  {
    Rng rng(seed, "encoder");
    encoder_ = EncoderStack(c, config_.heads, config_.encoder_layers, config_.grid(),
                            config_.grid(), rng);
  }
  {
    Rng rng(seed, "decoder");
    decoder_ = DecoderStack(c, config_.heads, config_.spatial(), config_.decoder_layers,
                            config_.baseline, config_.sharing, config_.norm, rng);
  }
  if (config_.imi != ImiMode::kOff) {
    Rng rng(seed, "imi");
    imi_ = ImiChain(c, config_.decoder_layers, config_.imi, rng);
  }
  if (config_.lfr) {
    Rng rng(seed, "lfr");
    lfr_ = LfrHead(c, config_.tokens, {.batch_norm = true, .strict_relu = config_.lfr_strict_relu},
                   rng);
  }
  {
    Rng rng(seed, "mask_head");
    mask_head_ = MaskHead(c, config_.tokens, config_.mask_channels, config_.heads, rng);
  }

  backbone_.register_into("backbone", registry_);
  language_.register_into("language", registry_);
  encoder_.register_into("encoder", registry_);
  decoder_.register_into("decoder", registry_);
  if (config_.imi != ImiMode::kOff) imi_.register_into("imi", registry_);
  if (config_.lfr) lfr_.register_into("lfr", registry_);
  mask_head_.register_into("mask_head", registry_);
}

ModelOutput Model::forward(const Tensor& images, const TokenBatch& tokens, bool training,
                           bool with_lfr) const {
  if (tokens.length != config_.tokens)
    throw DimensionError("model: expressions must be padded to " +
                         std::to_string(config_.tokens) + " tokens, got " +
                         std::to_string(tokens.length));
  if (images.rank() != 4 || images.dim(0) != tokens.batch ||
      images.dim(2) != config_.image_size || images.dim(3) != config_.image_size)
    throw DimensionError("model: images " + shape_str(images.shape()) + " do not match batch " +
                         std::to_string(tokens.batch) + " at size " +
                         std::to_string(config_.image_size));
  const std::size_t b = tokens.batch;
  const std::size_t c = config_.width;
  const std::size_t g = config_.grid();

  ModelOutput out;
  {
    ScopeGuard scope("backbone");
    out.visual = backbone_.forward(images, training);
  }
  {
    ScopeGuard scope("language");
    out.language = language_.forward(tokens, training);
  }
  if (config_.pad_masking) out.lang_mask = additive_key_mask(out.language.pad, b, tokens.length);
  {
    ScopeGuard scope("encoder");
    Tensor flat = transpose(reshape(out.visual, {b, c, g * g}));
    out.encoded = encoder_.forward(flat, training);
    out.encoded_map = reshape(transpose(out.encoded), {b, c, g, g});
  }
  {
    ScopeGuard scope("decoder");
    const ImiChain* chain = config_.imi == ImiMode::kOff ? nullptr : &imi_;
    out.decoder =
        decoder_.forward(out.language.words, out.encoded, out.lang_mask, chain, training);
  }
  {
    ScopeGuard scope("mask_head");
    out.head = mask_head_.forward(out.decoder.output, out.encoded_map, out.lang_mask, training);
    out.mask = out.head.mask;
  }
  if (config_.lfr && with_lfr) {
    ScopeGuard scope("lfr");
    out.lfr_target = lfr_.project_target(out.language.words, out.language.sentence);
    out.lfr_recon = lfr_.reconstruct(out.decoder.output, training);
  }
  return out;
}

void Model::save(const std::filesystem::path& path) const {
  Archive a;
  a.config = config_.serialize();
  auto add = [&](const RegisteredTensor& t) {
    a.records.push_back({t.name, t.tensor.shape(), t.tensor.to_vector()});
  };
  for (const auto& p : registry_.params()) add(p);
  for (const auto& p : registry_.buffers()) add(p);
  write_archive(path, a);
}

Model Model::load(const std::filesystem::path& path) {
  const Archive a = read_archive(path);
  ModelConfig cfg;
  try {
    cfg = ModelConfig::parse(a.config);
  } catch (const ConfigError& e) {
    throw CheckpointError(path.string() + ": stored config is invalid: " + e.what());
  }
  Model m(cfg);
  std::set<std::string> seen;
  auto restore = [&](const RegisteredTensor& t) {
    const TensorRecord* r = a.find(t.name);
    if (!r) throw CheckpointError(path.string() + ": missing tensor " + t.name);
    if (r->shape != t.tensor.shape())
      throw CheckpointError(path.string() + ": tensor " + t.name + " has shape " +
                            shape_str(r->shape) + ", model expects " +
                            shape_str(t.tensor.shape()));
    Tensor handle = t.tensor;
    std::copy(r->values.begin(), r->values.end(), handle.mutable_data().begin());
    seen.insert(t.name);
  };
  for (const auto& p : m.registry_.params()) restore(p);
  for (const auto& p : m.registry_.buffers()) restore(p);
  for (const auto& r : a.records)
    if (!seen.count(r.name)) throw CheckpointError(path.string() + ": unexpected tensor " + r.name);
  return m;
}

Model Model::load(const std::filesystem::path& path, std::uint64_t expected_hash) {
  Model m = load(path);
  if (m.config().hash() != expected_hash)
    throw CheckpointError(path.string() + ": config hash mismatch");
  return m;
}

Tensor bce_mask_loss(const Tensor& mask, const Tensor& target) {
  if (mask.shape() != target.shape())
    throw DimensionError("bce_mask_loss: prediction " + shape_str(mask.shape()) +
                         " vs target " + shape_str(target.shape()));
  return bce_loss(mask, target, 1e-7);
}

LossBreakdown total_loss(const Tensor& mask_loss, const Tensor& rec_loss,
                         const ModelConfig& config) {
  LossBreakdown out;
  out.w_mask = config.w_mask;
  out.w_rec = config.w_rec;
  out.mask = mask_loss.item();
  out.total = scale(mask_loss, config.w_mask);
  if (rec_loss.defined()) {
    out.rec = rec_loss.item();
    out.total = add(out.total, scale(rec_loss, config.w_rec));
  }
  out.loss = out.total.item();
  return out;
}

ForwardLoss forward_loss(const Model& model, const Batch& batch, bool training) {
  ForwardLoss r;
  r.output = model.forward(batch.images, batch.tokens, training, model.config().lfr);
  Tensor mask = bce_mask_loss(r.output.mask, batch.masks);
  Tensor rec;
  if (r.output.lfr_recon.defined()) rec = lfr_loss(r.output.lfr_recon, r.output.lfr_target);
  r.loss = total_loss(mask, rec, model.config());
  return r;
}

}  // namespace m3att
