#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "kdar/tape.hpp"

namespace kdar {

struct GradCheckFailure {
  std::string parameter;
  Index row = 0;
  Index col = 0;
  double analytic = 0;
  double numeric = 0;
};

struct GradCheckReport {
  std::size_t checked = 0;
  double max_error = 0;  // max of |analytic - numeric| / max(1, |analytic|)
  std::vector<GradCheckFailure> failures;

  bool passed() const { return failures.empty(); }
};

// Records the loss on the given tape and returns its 1 x 1 root.
using LossBuilder = std::function<Var(Tape<double>&)>;

// Compares tape gradients of `loss` with central differences
// (L(theta + h) - L(theta - h)) / 2h on `samples` coordinates drawn uniformly
// over all scalars of `store` (every coordinate when samples >= total).
// Parameter values are restored afterwards.
GradCheckReport finite_difference_check(const LossBuilder& loss, ParameterStore<double>& store,
                                        std::size_t samples, double h, double tol,
                                        std::uint64_t seed = 0);

}  // namespace kdar
