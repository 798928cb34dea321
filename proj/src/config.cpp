#include "m3att/config.hpp"

#include "m3att/model.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace m3att {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key=value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_key_values(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": '" + value + "' is not a number");
  }
}

long long parse_integer(const std::string& key, const std::string& value) {
  long long v = 0;
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (ec != std::errc() || ptr != end)
    throw ConfigError(key + ": '" + value + "' is not an integer");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw ConfigError(key + ": '" + value + "' is not a boolean");
}

// ---- ModelConfig ---------------------------------------------------------

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(width, "width");
  positive(mask_channels, "mask_channels");
  positive(decoder_layers, "decoder_layers");
  positive(heads, "heads");
  positive(tokens, "tokens");
  positive(vocab, "vocab");
  positive(image_size, "image_size");
  if (width % heads != 0)
    throw ConfigError("width " + std::to_string(width) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  if (width % 2 != 0) throw ConfigError("width must be even");
  if (mask_channels < 2) throw ConfigError("mask_channels must be at least 2");
  if (image_size % 4 != 0) throw ConfigError("image_size must be a multiple of 4");
  if (!(w_mask >= 0.0) || !(w_rec >= 0.0)) throw ConfigError("loss weights must be nonnegative");
  if (pad_id < 0 || static_cast<std::size_t>(pad_id) >= vocab)
    throw ConfigError("pad_id outside vocabulary");
}

std::string ModelConfig::serialize() const {
  std::ostringstream os;
  os.precision(17);
  os << "width=" << width << '\n'
     << "mask_channels=" << mask_channels << '\n'
     << "encoder_layers=" << encoder_layers << '\n'
     << "decoder_layers=" << decoder_layers << '\n'
     << "heads=" << heads << '\n'
     << "tokens=" << tokens << '\n'
     << "vocab=" << vocab << '\n'
     << "image_size=" << image_size << '\n'
     << "attention=" << (sharing == AttentionSharing::kShared ? "shared" : "independent") << '\n'
     << "imi=" << to_string(imi) << '\n'
     << "lfr=" << (lfr ? "true" : "false") << '\n'
     << "lfr_strict_relu=" << (lfr_strict_relu ? "true" : "false") << '\n'
     << "baseline=" << to_string(baseline) << '\n'
     << "norm=" << (norm == NormPlacement::kPost ? "post" : "pre") << '\n'
     << "w_mask=" << w_mask << '\n'
     << "w_rec=" << w_rec << '\n'
     << "pad_masking=" << (pad_masking ? "true" : "false") << '\n'
     << "pad_id=" << pad_id << '\n'
     << "seed=" << seed << '\n';
  return os.str();
}

std::uint64_t ModelConfig::hash() const { return fnv1a64(serialize()); }

std::vector<std::string> ModelConfig::apply(const std::map<std::string, std::string>& kv) {
  std::vector<std::string> unknown;
  auto size = [](const std::string& k, const std::string& v) {
    const long long n = parse_integer(k, v);
    if (n < 0) throw ConfigError(k + " must be nonnegative");
    return static_cast<std::size_t>(n);
  };
  for (const auto& [k, v] : kv) {
    if (k == "width") width = size(k, v);
    else if (k == "mask_channels") mask_channels = size(k, v);
    else if (k == "encoder_layers") encoder_layers = size(k, v);
    else if (k == "decoder_layers") decoder_layers = size(k, v);
    else if (k == "heads") heads = size(k, v);
    else if (k == "tokens") tokens = size(k, v);
    else if (k == "vocab") vocab = size(k, v);
    else if (k == "image_size") image_size = size(k, v);
    else if (k == "attention") {
      if (v == "shared") sharing = AttentionSharing::kShared;
      else if (v == "independent") sharing = AttentionSharing::kIndependent;
      else throw ConfigError("attention: unknown mode '" + v + "'");
    } else if (k == "imi") imi = parse_imi_mode(v);
    else if (k == "lfr") lfr = parse_bool(k, v);
    else if (k == "lfr_strict_relu") lfr_strict_relu = parse_bool(k, v);
    else if (k == "baseline") baseline = parse_fusion_kind(v);
    else if (k == "norm") {
      if (v == "post") norm = NormPlacement::kPost;
      else if (v == "pre") norm = NormPlacement::kPre;
      else throw ConfigError("norm: unknown placement '" + v + "'");
    } else if (k == "w_mask") w_mask = parse_real(k, v);
    else if (k == "w_rec") w_rec = parse_real(k, v);
    else if (k == "pad_masking") pad_masking = parse_bool(k, v);
    else if (k == "pad_id") pad_id = static_cast<int>(parse_integer(k, v));
    else if (k == "seed") seed = static_cast<std::uint64_t>(size(k, v));
    else unknown.push_back(k);
  }
  return unknown;
}

ModelConfig ModelConfig::parse(const std::string& text) {
  ModelConfig cfg;
  auto unknown = cfg.apply(parse_key_values(text));
  if (!unknown.empty()) throw ConfigError("unknown model config key '" + unknown.front() + "'");
  cfg.validate();
  return cfg;
}

ModelConfig ModelConfig::toy() {
  ModelConfig cfg;
  cfg.width = 32;
  cfg.mask_channels = 16;
  cfg.heads = 4;
  cfg.tokens = 8;
  cfg.vocab = 32;
  cfg.image_size = 32;
  return cfg;
}

}  // namespace m3att
