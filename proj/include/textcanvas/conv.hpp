#pragma once

#include <Eigen/Core>

#include "textcanvas/errors.hpp"
#include "textcanvas/types.hpp"

namespace textcanvas {

/// Geometry of a strided 2-D convolution over channel-major feature maps.
/// A feature map batch is a matrix (channels x (h*w*batch)) whose column
/// index is b*h*w + y*w + x.
struct ConvShape {
  int batch = 1;
  int in_c = 0;
  int in_h = 0;
  int in_w = 0;
  int out_c = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 0;

  int out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  Index in_cols() const { return static_cast<Index>(batch) * in_h * in_w; }
  Index out_cols() const { return static_cast<Index>(batch) * out_h() * out_w(); }
  Index patch_rows() const { return static_cast<Index>(in_c) * kernel * kernel; }

  void validate() const {
    if (in_c <= 0 || in_h <= 0 || in_w <= 0 || out_c <= 0 || batch <= 0)
      throw ShapeMismatch("conv shape has non-positive dimension");
    if (out_h() < 1 || out_w() < 1)
      throw ShapeMismatch("conv kernel larger than padded input");
  }
};

/// Gather convolution patches: (in_c x (h*w*B)) -> (in_c*k*k x (oh*ow*B)).
template <typename S>
Mat<S> im2col(const Mat<S>& x, const ConvShape& cs) {
  const int oh = cs.out_h(), ow = cs.out_w();
  Mat<S> cols = Mat<S>::Zero(cs.patch_rows(), cs.out_cols());
  for (int b = 0; b < cs.batch; ++b) {
    const Index in_base = static_cast<Index>(b) * cs.in_h * cs.in_w;
    const Index out_base = static_cast<Index>(b) * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const Index col = out_base + static_cast<Index>(oy) * ow + ox;
        for (int ky = 0; ky < cs.kernel; ++ky) {
          const int iy = oy * cs.stride - cs.pad + ky;
          if (iy < 0 || iy >= cs.in_h) continue;
          for (int kx = 0; kx < cs.kernel; ++kx) {
            const int ix = ox * cs.stride - cs.pad + kx;
            if (ix < 0 || ix >= cs.in_w) continue;
            const Index src = in_base + static_cast<Index>(iy) * cs.in_w + ix;
            const Index row0 = static_cast<Index>(ky) * cs.kernel + kx;
            for (int ci = 0; ci < cs.in_c; ++ci)
              cols(static_cast<Index>(ci) * cs.kernel * cs.kernel + row0, col) =
                  x(ci, src);
          }
        }
      }
    }
  }
  return cols;
}

/// Adjoint of im2col: scatter-add patches back to the input layout.
template <typename S>
Mat<S> col2im(const Mat<S>& cols, const ConvShape& cs) {
  const int oh = cs.out_h(), ow = cs.out_w();
  Mat<S> x = Mat<S>::Zero(cs.in_c, cs.in_cols());
  for (int b = 0; b < cs.batch; ++b) {
    const Index in_base = static_cast<Index>(b) * cs.in_h * cs.in_w;
    const Index out_base = static_cast<Index>(b) * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const Index col = out_base + static_cast<Index>(oy) * ow + ox;
        for (int ky = 0; ky < cs.kernel; ++ky) {
          const int iy = oy * cs.stride - cs.pad + ky;
          if (iy < 0 || iy >= cs.in_h) continue;
          for (int kx = 0; kx < cs.kernel; ++kx) {
            const int ix = ox * cs.stride - cs.pad + kx;
            if (ix < 0 || ix >= cs.in_w) continue;
            const Index dst = in_base + static_cast<Index>(iy) * cs.in_w + ix;
            const Index row0 = static_cast<Index>(ky) * cs.kernel + kx;
            for (int ci = 0; ci < cs.in_c; ++ci)
              x(ci, dst) +=
                  cols(static_cast<Index>(ci) * cs.kernel * cs.kernel + row0, col);
          }
        }
      }
    }
  }
  return x;
}

/// Output spatial size of a stride-s transposed convolution whose matching
/// forward convolution maps out_h -> in_h.
inline int conv_transpose_out(int in, int kernel, int stride, int pad) {
  return (in - 1) * stride - 2 * pad + kernel;
}

}  // namespace textcanvas
