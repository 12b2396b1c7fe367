#pragma once

#include <string>

#include "textcanvas/types.hpp"

namespace textcanvas::io {

/// Write an image as 8-bit RGB PNG, mapping [-1,1] to [0,255].
void write_png(const std::string& path, const Image& image);

/// Read an 8-bit PNG (any color type; converted to RGB) into [-1,1].
Image read_png(const std::string& path);

Image resize_bilinear(const Image& image, int out_h, int out_w);

}  // namespace textcanvas::io
