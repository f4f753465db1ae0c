#include "kdar/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace kdar {

GradCheckReport finite_difference_check(const LossBuilder& loss, ParameterStore<double>& store,
                                        std::size_t samples, double h, double tol,
                                        std::uint64_t seed) {
  store.zero_grad();
  {
    Tape<double> tape;
    tape.backward(loss(tape));
  }
  std::vector<Matrix<double>> analytic;
  for (std::size_t p = 0; p < store.size(); ++p) analytic.push_back(store[ParamId{p}].grad);
  store.zero_grad();

  // Flat coordinate space over all parameters.
  std::vector<std::size_t> offsets{0};
  for (std::size_t p = 0; p < store.size(); ++p) {
    offsets.push_back(offsets.back() + static_cast<std::size_t>(store[ParamId{p}].value.size()));
  }
  const std::size_t total = offsets.back();
  std::vector<std::size_t> coords(total);
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (samples < total) {
    std::mt19937_64 rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(samples);
    std::sort(coords.begin(), coords.end());
  }

  auto evaluate = [&] {
    Tape<double> tape;
    return tape.scalar(loss(tape));
  };

  GradCheckReport report;
  for (std::size_t flat : coords) {
    const auto p = static_cast<std::size_t>(
        std::upper_bound(offsets.begin(), offsets.end(), flat) - offsets.begin() - 1);
    auto& param = store[ParamId{p}];
    const auto k = static_cast<Index>(flat - offsets[p]);
    double& x = param.value.data()[k];
    const double saved = x;
    x = saved + h;
    const double up = evaluate();
    x = saved - h;
    const double down = evaluate();
    x = saved;

    const double numeric = (up - down) / (2 * h);
    const double a = analytic[p].data()[k];
    const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
    report.max_error = std::max(report.max_error, err);
    ++report.checked;
    if (!(err <= tol)) {
      const Index cols = param.value.cols();
      report.failures.push_back({param.name, k / cols, k % cols, a, numeric});
    }
  }
  return report;
}

}  // namespace kdar
