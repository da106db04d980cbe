#ifndef LEARN_CONV_KERNELS_HPP
#define LEARN_CONV_KERNELS_HPP

#include <Eigen/Dense>

#include <cstddef>

namespace learn::kernels {

template <typename Scalar>
using RowMajorMatrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
  std::size_t channels, height, width;  // image side of the correlation
  std::size_t kernel, stride, padding;

  std::size_t out_height() const {
    return (height + 2 * padding - kernel) / stride + 1;
  }
  std::size_t out_width() const {
    return (width + 2 * padding - kernel) / stride + 1;
  }
  std::size_t patch_size() const { return channels * kernel * kernel; }
};

/// Unfolds a [C,H,W] image into a [C*k*k, H'*W'] patch matrix.
template <typename Scalar>
void im2col(const Scalar* image, const ConvGeometry& g,
            RowMajorMatrix<Scalar>& cols) {
  const auto oh = g.out_height();
  const auto ow = g.out_width();
  cols.setZero(static_cast<Eigen::Index>(g.patch_size()),
               static_cast<Eigen::Index>(oh * ow));
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const auto row = static_cast<Eigen::Index>(
            (c * g.kernel + ky) * g.kernel + kx);
        Scalar* dst = cols.row(row).data();
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          const Scalar* src = image + (c * g.height + iy) * g.width;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            dst[oy * ow + ox] = src[ix];
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatter-adds a patch matrix back onto a [C,H,W] image.
template <typename Scalar>
void col2im(const RowMajorMatrix<Scalar>& cols, const ConvGeometry& g,
            Scalar* image) {
  const auto oh = g.out_height();
  const auto ow = g.out_width();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const auto row = static_cast<Eigen::Index>(
            (c * g.kernel + ky) * g.kernel + kx);
        const Scalar* src = cols.row(row).data();
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          Scalar* dst = image + (c * g.height + iy) * g.width;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            dst[ix] += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace learn::kernels

#endif  // LEARN_CONV_KERNELS_HPP
