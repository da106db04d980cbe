#ifndef LEARN_OPS_HPP
#define LEARN_OPS_HPP

#include <cstddef>
#include <span>
#include <vector>

#include "learn/tensor.hpp"

namespace learn {

// Convolutions. Images are [C,H,W]; conv kernels are [C_out,C_in,k,k];
// transposed-conv kernels are [C_in,C_out,k,k] so that transposed_conv2d with
// a given kernel is the input-adjoint of conv2d with the same kernel.

/// Cross-correlation (no kernel flip) with square kernels and zero padding.
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias,
              std::size_t stride = 1, std::size_t padding = 0);

/// Output size (H-1)*stride - 2*padding + k.
Tensor transposed_conv2d(const Tensor& input, const Tensor& kernels,
                         const Tensor& bias, std::size_t stride = 1,
                         std::size_t padding = 0);

struct PoolResult {
  Tensor output;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

PoolResult max_pool2d_with_indices(const Tensor& input, std::size_t k,
                                   std::size_t stride);
Tensor max_pool2d(const Tensor& input, std::size_t k = 2,
                  std::size_t stride = 2);

Tensor relu(const Tensor& input);
Tensor hard_tanh(const Tensor& input);

/// weights * input + bias with input [N] (any shape with N elements),
/// weights [D,N], bias [D].
Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias);

/// -log softmax(logits)[label], max-subtracted.
Tensor softmax_cross_entropy(const Tensor& logits, std::size_t label);
Vector softmax(const Vector& logits);

// Elementwise and reductions.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// a * x + b elementwise for constants a, b.
Tensor affine(const Tensor& x, double scale, double shift = 0.0);
/// x * factors elementwise, factors constant and broadcast over the last
/// axes (factors.size() must divide x.size() as a leading-axis broadcast).
Tensor scale_channels(const Tensor& x, const Vector& factors);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor dot(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& x, Shape shape);
Tensor flatten(const Tensor& x);
/// Mean of a list of scalar tensors as a single node.
Tensor mean_of(std::span<const Tensor> scalars);

/// sum((a-b)^2) and mean((a-b)^2).
Tensor squared_distance(const Tensor& a, const Tensor& b);
Tensor mean_squared_error(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(double s, const Tensor& x) { return affine(x, s); }

}  // namespace learn

#endif  // LEARN_OPS_HPP
