#pragma once

#include <Eigen/Core>

namespace textcanvas {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matd = Mat<double>;
using Vecd = Vec<double>;
using Index = Eigen::Index;

/// Channel-major image: `chw` has one row per channel and one column per
/// pixel in row-major spatial order (col = y*w + x). Values live in [-1,1].
struct Image {
  int h = 0;
  int w = 0;
  Matd chw;  // channels x (h*w)

  static Image zero(int h, int w, int channels = 3) {
    Image im;
    im.h = h;
    im.w = w;
    im.chw = Matd::Zero(channels, static_cast<Index>(h) * w);
    return im;
  }
  Index pixels() const { return static_cast<Index>(h) * w; }
  int channels() const { return static_cast<int>(chw.rows()); }
};

inline bool is_finite(const Matd& m) { return m.allFinite(); }

}  // namespace textcanvas
