#include "learn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "learn/random.hpp"

namespace learn {

namespace {
constexpr double kKinkTolerance = 1e-4;
}  // namespace

GradCheckReport grad_check(const std::function<Tensor()>& loss,
                           std::span<Tensor> parameters, double epsilon) {
  return grad_check(loss, parameters, epsilon, 0, 0);
}

GradCheckReport grad_check(const std::function<Tensor()>& loss,
                           std::span<Tensor> parameters, double epsilon,
                           std::size_t max_entries, std::uint64_t seed) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) {
    throw std::invalid_argument("grad_check: epsilon must lie in [1e-7, 1e-3]");
  }
  for (auto& p : parameters) {
    if (!p.requires_grad()) {
      throw std::invalid_argument("grad_check: parameter " +
                                  to_string(p.shape()) +
                                  " does not require gradients");
    }
    p.zero_grad();
  }
  loss().backward();

  GradCheckReport report;
  for (std::size_t pi = 0; pi < parameters.size(); ++pi) {
    Tensor& p = parameters[pi];
    const Vector analytic = p.grad();
    std::vector<std::size_t> entries(p.size());
    std::iota(entries.begin(), entries.end(), 0);
    if (max_entries > 0 && entries.size() > max_entries) {
      Rng rng(derive_seed(seed, pi));
      shuffle(entries.begin(), entries.end(), rng);
      entries.resize(max_entries);
    }
    for (std::size_t i : entries) {
      const double saved = p[i];
      const double here = loss().item();
      std::optional<double> numeric;
      double h = epsilon;
      for (int attempt = 0; attempt < 3 && !numeric; ++attempt, h *= 0.1) {
        p[i] = saved + h;
        const double up = loss().item();
        p[i] = saved - h;
        const double down = loss().item();
        p[i] = saved;
        const double d = (up - down) / (2.0 * h);
        // A kink inside the stencil biases d by exactly half of this.
        const double bend = std::abs(up - 2.0 * here + down) / h;
        if (bend <= kKinkTolerance * std::max(std::abs(d), 1e-8)) numeric = d;
      }
      if (!numeric) {
        ++report.kinks;
        continue;
      }
      ++report.checked;
      const double a = analytic[static_cast<Eigen::Index>(i)];
      const double denom =
          std::max({std::abs(a), std::abs(*numeric), 1e-8});
      const double err = std::abs(a - *numeric) / denom;
      if (err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_parameter = pi;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = *numeric;
      }
    }
  }
  return report;
}

}  // namespace learn
