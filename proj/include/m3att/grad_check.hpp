#pragma once

#include "m3att/tensor.hpp"

#include <functional>
#include <string>
#include <vector>

namespace m3att {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Relative error uses max(|analytic|, |numeric|, floor) as denominator so
  // that entries whose gradient is numerically zero are compared absolutely.
  double floor = 1e-5;
  // Entries checked per tensor; 0 checks every entry.
  std::size_t max_entries_per_tensor = 0;
  unsigned seed = 0;  // picks the subset when max_entries_per_tensor > 0
};

struct TensorCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  std::vector<TensorCheck> tensors;
  double max_rel_error = 0.0;
  bool passed = false;
  // Set when f was non-finite at a perturbed point.
  std::string failure;
};

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// Compares reverse-mode gradients of the scalar f against central differences.
// f must rebuild its graph from params on every call.
GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<NamedParam> params,
                           const GradCheckOptions& options = {});

}  // namespace m3att
