#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gramflow/tensor.hpp"

namespace gramflow {

struct GradCheckResult {
  std::string target;
  double max_rel_err = 0.0;
  double tol = 1e-5;

  bool ok() const { return max_rel_err < tol; }
};

// Central finite differences of `loss` at `x` against the analytic gradient.
// Returns the worst relative error |a - f| / max(|a|, |f|, 1e-2).
double fd_check(const std::function<double(const Tensor&)>& loss, const Tensor& x,
                const Tensor& analytic, double h = 1e-5);

// Randomized suites, one result row per gradient target; `trials` independent
// instances per target, worst error kept.
std::vector<GradCheckResult> gradcheck_primitives(std::uint64_t seed, std::size_t trials);
std::vector<GradCheckResult> gradcheck_lgf(std::uint64_t seed, std::size_t trials);
std::vector<GradCheckResult> gradcheck_projector(std::uint64_t seed, std::size_t trials);
std::vector<GradCheckResult> gradcheck_end_to_end(std::uint64_t seed, std::size_t trials);

}  // namespace gramflow
