#include "m3att/metrics.hpp"

#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace m3att {

double iou(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt) {
  if (pred.size() != gt.size())
    throw std::invalid_argument("iou: mask sizes differ (" + std::to_string(pred.size()) +
                                " vs " + std::to_string(gt.size()) + ")");
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0;
    const bool g = gt[i] != 0;
    inter += p && g;
    uni += p || g;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double precision_at(const std::vector<double>& ious, double x) {
  if (ious.empty()) throw std::invalid_argument("precision_at: no IoU values");
  if (!(x > 0.0 && x < 1.0)) throw std::invalid_argument("precision_at: threshold outside (0,1)");
  std::size_t hits = 0;
  for (double v : ious) hits += v > x;
  return static_cast<double>(hits) / static_cast<double>(ious.size());
}

std::vector<std::uint8_t> binarize(const std::vector<double>& probabilities, double threshold) {
  std::vector<std::uint8_t> out(probabilities.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = probabilities[i] > threshold ? 1 : 0;
  return out;
}

EvalReport EvalReport::from_ious(std::vector<double> ious) {
  EvalReport r;
  r.count = ious.size();
  if (!ious.empty()) {
    r.mean_iou = std::accumulate(ious.begin(), ious.end(), 0.0) / static_cast<double>(r.count);
    for (std::size_t k = 0; k < kPrecisionThresholds.size(); ++k)
      r.precision[k] = precision_at(ious, kPrecisionThresholds[k]);
  }
  r.ious = std::move(ious);
  return r;
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  os << "count=" << count << '\n' << "mean_iou=" << mean_iou << '\n';
  for (std::size_t k = 0; k < kPrecisionThresholds.size(); ++k) {
    os.precision(1);
    os << "pr@" << kPrecisionThresholds[k] << '=';
    os.precision(6);
    os << precision[k] << '\n';
  }
  return os.str();
}

void append_ledger_row(const std::filesystem::path& path, const LedgerRow& row) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot append to " + path.string());
  out.precision(6);
  out << std::fixed << row.suite << '\t' << row.config << '\t' << row.seed << '\t'
      << row.report.mean_iou;
  for (double p : row.report.precision) out << '\t' << p;
  out.precision(2);
  out << '\t' << row.wall_seconds << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace m3att
