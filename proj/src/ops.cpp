#include "learn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "learn/conv_kernels.hpp"

namespace learn {

namespace {

using kernels::ConvGeometry;
using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;

auto rows(std::size_t n) { return static_cast<Eigen::Index>(n); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                to_string(a.shape()) + " vs " +
                                to_string(b.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op,
                  const char* what) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": " + what + " must have rank " +
                                std::to_string(rank) + ", got shape " +
                                to_string(t.shape()));
  }
}

void check_conv_args(const Tensor& input, const Tensor& kernels,
                     const Tensor& bias, std::size_t stride,
                     std::size_t kernel_in_axis, std::size_t kernel_out_axis,
                     const char* op) {
  require_rank(input, 3, op, "input");
  require_rank(kernels, 4, op, "kernels");
  if (stride == 0) throw std::invalid_argument(std::string(op) + ": stride must be positive");
  if (kernels.dim(2) != kernels.dim(3)) {
    throw std::invalid_argument(std::string(op) + ": kernels must be square, got " +
                                to_string(kernels.shape()));
  }
  if (kernels.dim(kernel_in_axis) != input.dim(0)) {
    throw std::invalid_argument(std::string(op) + ": input " +
                                to_string(input.shape()) +
                                " has channels that do not match kernels " +
                                to_string(kernels.shape()));
  }
  if (bias.size() != kernels.dim(kernel_out_axis)) {
    throw std::invalid_argument(std::string(op) + ": bias " +
                                to_string(bias.shape()) +
                                " does not match kernels " +
                                to_string(kernels.shape()));
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias,
              std::size_t stride, std::size_t padding) {
  check_conv_args(input, kernels, bias, stride, 1, 0, "conv2d");
  const ConvGeometry g{input.dim(0), input.dim(1), input.dim(2),
                       kernels.dim(2), stride, padding};
  if (g.kernel > g.height + 2 * padding || g.kernel > g.width + 2 * padding) {
    throw std::invalid_argument("conv2d: kernel " + to_string(kernels.shape()) +
                                " larger than padded input " +
                                to_string(input.shape()));
  }
  const auto out_c = kernels.dim(0);
  const auto oh = g.out_height();
  const auto ow = g.out_width();

  RowMatrix cols;
  kernels::im2col(input.values().data(), g, cols);
  ConstRowMap w(kernels.values().data(), rows(out_c), rows(g.patch_size()));

  Vector out(rows(out_c * oh * ow));
  RowMap y(out.data(), rows(out_c), rows(oh * ow));
  y.noalias() = w * cols;
  y.colwise() += bias.values();

  return Tensor::make_result(
      {out_c, oh, ow}, std::move(out), {input, kernels, bias},
      [input, kernels, g, out_c, cols = std::move(cols)](
          const Vector& grad_out, detail::GradSink& sink) {
        const auto n = rows(g.out_height() * g.out_width());
        Eigen::Map<const RowMatrix> gy(grad_out.data(), rows(out_c), n);
        ConstRowMap w(kernels.values().data(), rows(out_c),
                      rows(g.patch_size()));
        if (sink.wants(0)) {
          RowMatrix gcols = w.transpose() * gy;
          kernels::col2im(gcols, g, sink.grad(0).data());
        }
        if (sink.wants(1)) {
          RowMap gw(sink.grad(1).data(), rows(out_c), rows(g.patch_size()));
          gw.noalias() += gy * cols.transpose();
        }
        if (sink.wants(2)) sink.grad(2) += gy.rowwise().sum();
      });
}

Tensor transposed_conv2d(const Tensor& input, const Tensor& kernels,
                         const Tensor& bias, std::size_t stride,
                         std::size_t padding) {
  check_conv_args(input, kernels, bias, stride, 0, 1, "transposed_conv2d");
  const auto in_c = input.dim(0);
  const auto h = input.dim(1);
  const auto w_in = input.dim(2);
  const auto k = kernels.dim(2);
  const auto out_c = kernels.dim(1);
  const auto span_h = (h - 1) * stride + k;
  const auto span_w = (w_in - 1) * stride + k;
  if (span_h <= 2 * padding || span_w <= 2 * padding) {
    throw std::invalid_argument("transposed_conv2d: padding " +
                                std::to_string(padding) +
                                " leaves an empty output for input " +
                                to_string(input.shape()));
  }
  // The correlation this operation is the input-adjoint of.
  const ConvGeometry g{out_c, span_h - 2 * padding, span_w - 2 * padding,
                       k, stride, padding};

  ConstRowMap wm(kernels.values().data(), rows(in_c), rows(g.patch_size()));
  ConstRowMap x(input.values().data(), rows(in_c), rows(h * w_in));
  RowMatrix cols = wm.transpose() * x;

  Vector out = Vector::Zero(rows(out_c * g.height * g.width));
  kernels::col2im(cols, g, out.data());
  RowMap y(out.data(), rows(out_c), rows(g.height * g.width));
  y.colwise() += bias.values();

  return Tensor::make_result(
      {out_c, g.height, g.width}, std::move(out), {input, kernels, bias},
      [input, kernels, g, in_c, h, w_in](const Vector& grad_out,
                                         detail::GradSink& sink) {
        RowMatrix gcols;
        kernels::im2col(grad_out.data(), g, gcols);
        ConstRowMap wm(kernels.values().data(), rows(in_c),
                       rows(g.patch_size()));
        if (sink.wants(0)) {
          RowMap gx(sink.grad(0).data(), rows(in_c), rows(h * w_in));
          gx.noalias() += wm * gcols;
        }
        if (sink.wants(1)) {
          ConstRowMap x(input.values().data(), rows(in_c), rows(h * w_in));
          RowMap gw(sink.grad(1).data(), rows(in_c), rows(g.patch_size()));
          gw.noalias() += x * gcols.transpose();
        }
        if (sink.wants(2)) {
          Eigen::Map<const RowMatrix> gy(grad_out.data(), rows(g.channels),
                                         rows(g.height * g.width));
          sink.grad(2) += gy.rowwise().sum();
        }
      });
}

PoolResult max_pool2d_with_indices(const Tensor& input, std::size_t k,
                                   std::size_t stride) {
  require_rank(input, 3, "max_pool2d", "input");
  if (k == 0 || stride == 0) {
    throw std::invalid_argument("max_pool2d: window and stride must be positive");
  }
  const auto c = input.dim(0);
  const auto h = input.dim(1);
  const auto w = input.dim(2);
  if (k > h || k > w) {
    throw std::invalid_argument("max_pool2d: window " + std::to_string(k) +
                                " larger than input " +
                                to_string(input.shape()));
  }
  const auto oh = (h - k) / stride + 1;
  const auto ow = (w - k) / stride + 1;
  const auto& x = input.values();

  Vector out(rows(c * oh * ow));
  std::vector<std::size_t> argmax(c * oh * ow);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (ch * h + oy * stride) * w + ox * stride;
        for (std::size_t dy = 0; dy < k; ++dy) {
          for (std::size_t dx = 0; dx < k; ++dx) {
            const auto idx = (ch * h + oy * stride + dy) * w + ox * stride + dx;
            if (x[rows(idx)] > x[rows(best)]) best = idx;
          }
        }
        const auto o = (ch * oh + oy) * ow + ox;
        out[rows(o)] = x[rows(best)];
        argmax[o] = best;
      }
    }
  }

  Tensor result = Tensor::make_result(
      {c, oh, ow}, std::move(out), {input},
      [argmax](const Vector& grad_out, detail::GradSink& sink) {
        if (!sink.wants(0)) return;
        Vector& gx = sink.grad(0);
        for (std::size_t o = 0; o < argmax.size(); ++o) {
          gx[rows(argmax[o])] += grad_out[rows(o)];
        }
      });
  return {std::move(result), std::move(argmax)};
}

Tensor max_pool2d(const Tensor& input, std::size_t k, std::size_t stride) {
  return max_pool2d_with_indices(input, k, stride).output;
}

Tensor relu(const Tensor& input) {
  Vector out = input.values().cwiseMax(0.0);
  return Tensor::make_result(
      input.shape(), std::move(out), {input},
      [input](const Vector& grad_out, detail::GradSink& sink) {
        if (!sink.wants(0)) return;
        sink.grad(0).array() +=
            (input.values().array() > 0.0).select(grad_out.array(), 0.0);
      });
}

Tensor hard_tanh(const Tensor& input) {
  Vector out = input.values().cwiseMax(-1.0).cwiseMin(1.0);
  return Tensor::make_result(
      input.shape(), std::move(out), {input},
      [input](const Vector& grad_out, detail::GradSink& sink) {
        if (!sink.wants(0)) return;
        const auto& x = input.values().array();
        sink.grad(0).array() +=
            (x > -1.0 && x < 1.0).select(grad_out.array(), 0.0);
      });
}

Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  require_rank(weights, 2, "linear", "weights");
  const auto d = weights.dim(0);
  const auto n = weights.dim(1);
  if (input.size() != n || bias.size() != d) {
    throw std::invalid_argument("linear: input " + to_string(input.shape()) +
                                " and bias " + to_string(bias.shape()) +
                                " do not match weights " +
                                to_string(weights.shape()));
  }
  ConstRowMap w(weights.values().data(), rows(d), rows(n));
  Vector out = w * input.values() + bias.values();
  return Tensor::make_result(
      {d}, std::move(out), {input, weights, bias},
      [input, weights, d, n](const Vector& grad_out, detail::GradSink& sink) {
        ConstRowMap w(weights.values().data(), rows(d), rows(n));
        if (sink.wants(0)) sink.grad(0).noalias() += w.transpose() * grad_out;
        if (sink.wants(1)) {
          RowMap gw(sink.grad(1).data(), rows(d), rows(n));
          gw.noalias() += grad_out * input.values().transpose();
        }
        if (sink.wants(2)) sink.grad(2) += grad_out;
      });
}

Vector softmax(const Vector& logits) {
  Vector e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

Tensor softmax_cross_entropy(const Tensor& logits, std::size_t label) {
  if (label >= logits.size()) {
    throw std::out_of_range("softmax_cross_entropy: label " +
                            std::to_string(label) + " outside " +
                            std::to_string(logits.size()) + " classes");
  }
  const Vector& z = logits.values();
  const double top = z.maxCoeff();
  const double log_norm = std::log((z.array() - top).exp().sum()) + top;
  const double loss = log_norm - z[rows(label)];
  return Tensor::make_result(
      {1}, Vector::Constant(1, loss), {logits},
      [logits, label](const Vector& grad_out, detail::GradSink& sink) {
        if (!sink.wants(0)) return;
        Vector p = softmax(logits.values());
        p[rows(label)] -= 1.0;
        sink.grad(0) += grad_out[0] * p;
      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  return Tensor::make_result(a.shape(), a.values() + b.values(), {a, b},
                             [](const Vector& g, detail::GradSink& sink) {
                               if (sink.wants(0)) sink.grad(0) += g;
                               if (sink.wants(1)) sink.grad(1) += g;
                             });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  return Tensor::make_result(a.shape(), a.values() - b.values(), {a, b},
                             [](const Vector& g, detail::GradSink& sink) {
                               if (sink.wants(0)) sink.grad(0) += g;
                               if (sink.wants(1)) sink.grad(1) -= g;
                             });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  return Tensor::make_result(
      a.shape(), a.values().cwiseProduct(b.values()), {a, b},
      [a, b](const Vector& g, detail::GradSink& sink) {
        if (sink.wants(0)) sink.grad(0) += g.cwiseProduct(b.values());
        if (sink.wants(1)) sink.grad(1) += g.cwiseProduct(a.values());
      });
}

Tensor affine(const Tensor& x, double scale, double shift) {
  Vector out = (scale * x.values()).array() + shift;
  return Tensor::make_result(x.shape(), std::move(out), {x},
                             [scale](const Vector& g, detail::GradSink& sink) {
                               if (sink.wants(0)) sink.grad(0) += scale * g;
                             });
}

Tensor scale_channels(const Tensor& x, const Vector& factors) {
  const auto c = static_cast<std::size_t>(factors.size());
  if (c == 0 || x.rank() == 0 || x.dim(0) != c) {
    throw std::invalid_argument("scale_channels: " + std::to_string(c) +
                                " factors for tensor " + to_string(x.shape()));
  }
  const auto block = x.size() / c;
  Vector out = x.values();
  RowMap(out.data(), rows(c), rows(block)).array().colwise() *= factors.array();
  return Tensor::make_result(
      x.shape(), std::move(out), {x},
      [factors, c, block](const Vector& g, detail::GradSink& sink) {
        if (!sink.wants(0)) return;
        RowMap gx(sink.grad(0).data(), rows(c), rows(block));
        Eigen::Map<const RowMatrix> gy(g.data(), rows(c), rows(block));
        gx.array() += gy.array().colwise() * factors.array();
      });
}

Tensor sum(const Tensor& x) {
  return Tensor::make_result({1}, Vector::Constant(1, x.values().sum()), {x},
                             [](const Vector& g, detail::GradSink& sink) {
                               if (sink.wants(0)) sink.grad(0).array() += g[0];
                             });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.size());
  return Tensor::make_result(
      {1}, Vector::Constant(1, x.values().mean()), {x},
      [n](const Vector& g, detail::GradSink& sink) {
        if (sink.wants(0)) sink.grad(0).array() += g[0] / n;
      });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("dot: size mismatch " + to_string(a.shape()) +
                                " vs " + to_string(b.shape()));
  }
  return Tensor::make_result(
      {1}, Vector::Constant(1, a.values().dot(b.values())), {a, b},
      [a, b](const Vector& g, detail::GradSink& sink) {
        if (sink.wants(0)) sink.grad(0) += g[0] * b.values();
        if (sink.wants(1)) sink.grad(1) += g[0] * a.values();
      });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw std::invalid_argument("reshape: cannot view " + to_string(x.shape()) +
                                " as " + to_string(shape));
  }
  return Tensor::make_result(std::move(shape), x.values(), {x},
                             [](const Vector& g, detail::GradSink& sink) {
                               if (sink.wants(0)) sink.grad(0) += g;
                             });
}

Tensor flatten(const Tensor& x) { return reshape(x, {x.size()}); }

Tensor mean_of(std::span<const Tensor> scalars) {
  if (scalars.empty()) throw std::invalid_argument("mean_of: empty list");
  double total = 0.0;
  for (const auto& s : scalars) total += s.item();
  const double n = static_cast<double>(scalars.size());
  return Tensor::make_result(
      {1}, Vector::Constant(1, total / n),
      std::vector<Tensor>(scalars.begin(), scalars.end()),
      [count = scalars.size(), n](const Vector& g, detail::GradSink& sink) {
        for (std::size_t i = 0; i < count; ++i) {
          if (sink.wants(i)) sink.grad(i)[0] += g[0] / n;
        }
      });
}

Tensor squared_distance(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("squared_distance: size mismatch " +
                                to_string(a.shape()) + " vs " +
                                to_string(b.shape()));
  }
  Vector diff = a.values() - b.values();
  const double d2 = diff.squaredNorm();
  return Tensor::make_result(
      {1}, Vector::Constant(1, d2), {a, b},
      [diff = std::move(diff)](const Vector& g, detail::GradSink& sink) {
        if (sink.wants(0)) sink.grad(0) += 2.0 * g[0] * diff;
        if (sink.wants(1)) sink.grad(1) -= 2.0 * g[0] * diff;
      });
}

Tensor mean_squared_error(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mean_squared_error");
  return affine(squared_distance(a, b), 1.0 / static_cast<double>(a.size()));
}

}  // namespace learn
