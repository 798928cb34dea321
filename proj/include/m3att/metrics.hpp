#pragma once

// Mask IoU, Precision@X and the evaluation report.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace m3att {

inline constexpr std::array<double, 5> kPrecisionThresholds = {0.5, 0.6, 0.7, 0.8, 0.9};

// |pred & gt| / |pred | gt| over binary masks; 1.0 when both are empty.
double iou(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt);

// Fraction of ious strictly greater than x.
double precision_at(const std::vector<double>& ious, double x);

std::vector<std::uint8_t> binarize(const std::vector<double>& probabilities,
                                   double threshold = 0.5);

struct EvalReport {
  double mean_iou = 0.0;
  std::array<double, 5> precision{};  // at kPrecisionThresholds
  std::size_t count = 0;
  std::vector<double> ious;

  static EvalReport from_ious(std::vector<double> ious);
  // key=value lines.
  std::string to_text() const;
};

struct LedgerRow {
  std::string suite;
  std::string config;
  std::uint64_t seed = 0;
  EvalReport report;
  double wall_seconds = 0.0;
};

// Appends one tab-separated row: suite, config, seed, IoU, Pr@0.5..0.9, wall time.
void append_ledger_row(const std::filesystem::path& path, const LedgerRow& row);

}  // namespace m3att
