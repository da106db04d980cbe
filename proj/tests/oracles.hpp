#ifndef LEARN_TESTS_ORACLES_HPP
#define LEARN_TESTS_ORACLES_HPP

// Loop-based reference implementations. Kept independent of the Eigen paths
// they are used to check.

#include <cstddef>
#include <vector>

#include "learn/random.hpp"
#include "learn/tensor.hpp"

namespace oracle {

inline learn::Tensor random_tensor(learn::Shape shape, learn::Rng& rng,
                                   double lo = -1.0, double hi = 1.0) {
  learn::Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline std::vector<double> conv2d(const learn::Tensor& x,
                                  const learn::Tensor& w,
                                  const learn::Tensor& b, std::size_t stride,
                                  std::size_t pad) {
  const auto ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const auto co = w.dim(0), k = w.dim(2);
  const auto oh = (h + 2 * pad - k) / stride + 1;
  const auto ow = (wd + 2 * pad - k) / stride + 1;
  std::vector<double> out(co * oh * ow);
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        double acc = b[o];
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              long iy = long(y * stride + ky) - long(pad);
              long ix = long(xx * stride + kx) - long(pad);
              if (iy < 0 || ix < 0 || iy >= long(h) || ix >= long(wd)) continue;
              acc += x[(c * h + iy) * wd + ix] *
                     w[((o * ci + c) * k + ky) * k + kx];
            }
        out[(o * oh + y) * ow + xx] = acc;
      }
  return out;
}

// Each input pixel stamps its kernel, scaled, onto the output grid.
inline std::vector<double> transposed_conv2d(const learn::Tensor& x,
                                             const learn::Tensor& w,
                                             const learn::Tensor& b,
                                             std::size_t stride,
                                             std::size_t pad) {
  const auto ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const auto co = w.dim(1), k = w.dim(2);
  const long oh = long((h - 1) * stride + k) - 2 * long(pad);
  const long ow = long((wd - 1) * stride + k) - 2 * long(pad);
  std::vector<double> out(co * oh * ow);
  for (std::size_t o = 0; o < co; ++o)
    for (long i = 0; i < oh * ow; ++i) out[o * oh * ow + i] = b[o];
  for (std::size_t c = 0; c < ci; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < wd; ++xx)
        for (std::size_t o = 0; o < co; ++o)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              long oy = long(y * stride + ky) - long(pad);
              long ox = long(xx * stride + kx) - long(pad);
              if (oy < 0 || ox < 0 || oy >= oh || ox >= ow) continue;
              out[(o * oh + oy) * ow + ox] +=
                  x[(c * h + y) * wd + xx] * w[((c * co + o) * k + ky) * k + kx];
            }
  return out;
}

inline double inner(const std::vector<double>& a, const learn::Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace oracle

#endif
