#ifndef LEARN_GRAD_CHECK_HPP
#define LEARN_GRAD_CHECK_HPP

#include <cstdint>
#include <functional>
#include <span>

#include "learn/tensor.hpp"

namespace learn {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_parameter = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
  /// Entries whose stencil still straddled a kink at the smallest step.
  std::size_t kinks = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. Each error is |a - n| / max(|a|, |n|, 1e-8); the report holds
/// the maximum over every entry of every parameter. Parameters must require
/// gradients; their gradient buffers are zeroed on entry and left holding the
/// analytic gradient.
///
/// A stencil that straddles a non-differentiable point (relu, hard_tanh,
/// max-pool switch, hinge) biases the central difference by half the jump
/// in the one-sided slopes, (f(x+h) - 2f(x) + f(x-h)) / h, which is only
/// f''h on smooth stretches. Entries where that exceeds 1e-4 of the slope
/// are re-probed with h/10 and h/100 and counted in `kinks` if none passes.
/// The test never looks at the analytic value, so it cannot hide a wrong
/// gradient.
GradCheckReport grad_check(const std::function<Tensor()>& loss,
                           std::span<Tensor> parameters,
                           double epsilon = 1e-5);

/// As above, but checks at most `max_entries` randomly chosen entries of each
/// parameter (all entries of smaller ones).
GradCheckReport grad_check(const std::function<Tensor()>& loss,
                           std::span<Tensor> parameters, double epsilon,
                           std::size_t max_entries, std::uint64_t seed);

}  // namespace learn

#endif  // LEARN_GRAD_CHECK_HPP
