#pragma once

// The full referring-segmentation model: toy CNN backbone and recurrent
// language encoder, transformer encoder, mutual decoder stack with IMI,
// LFR head and the dynamic-kernel mask head, plus the training losses.

#include "m3att/decoder.hpp"
#include "m3att/imi.hpp"
#include "m3att/language_encoder.hpp"
#include "m3att/lfr.hpp"
#include "m3att/mask_head.hpp"
#include "m3att/mutual_attention.hpp"
#include "m3att/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace m3att {

struct ModelConfig {
  std::size_t width = 256;          // C
  std::size_t mask_channels = 512;  // D
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 3;
  std::size_t heads = 8;
  std::size_t tokens = 15;  // N_t, padded expression length
  std::size_t vocab = 32;
  std::size_t image_size = 32;
  AttentionSharing sharing = AttentionSharing::kShared;
  ImiMode imi = ImiMode::kFull;
  bool lfr = true;
  bool lfr_strict_relu = false;
  FusionKind baseline = FusionKind::kMutual;
  NormPlacement norm = NormPlacement::kPost;
  double w_mask = 1.0;
  double w_rec = 0.1;
  bool pad_masking = true;
  int pad_id = 0;
  std::uint64_t seed = 0;

  // Throws ConfigError on violated invariants.
  void validate() const;
  std::size_t grid() const { return image_size / 4; }
  std::size_t spatial() const { return grid() * grid(); }

  // Canonical key=value text; identical configs give identical text.
  std::string serialize() const;
  std::uint64_t hash() const;
  // Applies recognized keys, leaving others in place; returns unknown keys.
  std::vector<std::string> apply(const std::map<std::string, std::string>& kv);
  static ModelConfig parse(const std::string& text);

  // Small dimensions used by tests and desk-scale training.
  static ModelConfig toy();
};

class ToyVisionBackbone {
 public:
  ToyVisionBackbone() = default;
  ToyVisionBackbone(std::size_t width, Rng& rng);
  // [B,3,S,S] -> [B,C,S/4,S/4]
  Tensor forward(const Tensor& images, bool training) const;
  void register_into(const std::string& prefix, ParamRegistry& reg);

 private:
  Conv2d stage1_, stage2_, stage3_;
};

struct ModelOutput {
  Tensor mask;         // [B,1,S,S] probabilities
  LanguageFeatures language;
  Tensor lang_mask;    // additive [B,N] (undefined without pad masking)
  Tensor visual;       // backbone output [B,C,H,W]
  Tensor encoded;      // F_enc [B,HW,C]
  Tensor encoded_map;  // F_enc as [B,C,H,W]
  DecoderStackOutput decoder;
  MaskHeadOutput head;
  Tensor lfr_target;   // [B,1,C], when LFR runs
  Tensor lfr_recon;    // [B,1,C]
};

class Model {
 public:
  explicit Model(const ModelConfig& config);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }

  // with_lfr computes the reconstruction branch (training-only).
  ModelOutput forward(const Tensor& images, const TokenBatch& tokens, bool training,
                      bool with_lfr = true) const;

  ParamRegistry& registry() { return registry_; }
  const ParamRegistry& registry() const { return registry_; }

  LanguageEncoder& language() { return language_; }
  EncoderStack& encoder() { return encoder_; }
  DecoderStack& decoder() { return decoder_; }
  ImiChain& imi() { return imi_; }
  LfrHead& lfr() { return lfr_; }
  MaskHead& mask_head() { return mask_head_; }

  void save(const std::filesystem::path& path) const;
  // Throws CheckpointError on format or config mismatch.
  static Model load(const std::filesystem::path& path);
  // expected_hash must match the stored config when given.
  static Model load(const std::filesystem::path& path, std::uint64_t expected_hash);

 private:
  ModelConfig config_;
  ToyVisionBackbone backbone_;
  LanguageEncoder language_;
  EncoderStack encoder_;
  DecoderStack decoder_;
  ImiChain imi_;
  LfrHead lfr_;
  MaskHead mask_head_;
  ParamRegistry registry_;
};

struct LossBreakdown {
  Tensor total;
  double loss = 0.0;
  double mask = 0.0;
  double rec = 0.0;
  double w_mask = 0.0;
  double w_rec = 0.0;
};

Tensor bce_mask_loss(const Tensor& mask, const Tensor& target);
// rec may be undefined (LFR disabled): the term contributes exactly 0.
LossBreakdown total_loss(const Tensor& mask_loss, const Tensor& rec_loss,
                         const ModelConfig& config);

struct Batch {
  Tensor images;  // [B,3,S,S]
  TokenBatch tokens;
  Tensor masks;   // [B,1,S,S] in {0,1}
};

struct ForwardLoss {
  ModelOutput output;
  LossBreakdown loss;
};

ForwardLoss forward_loss(const Model& model, const Batch& batch, bool training);

}  // namespace m3att
