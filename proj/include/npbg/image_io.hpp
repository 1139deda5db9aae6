#pragma once

#include <string>

#include "npbg/tensor.hpp"

namespace npbg {

/// Loads an 8-bit PNG as a [3,H,W] float tensor in [0,1] (values/255).
/// Grayscale is expanded to RGB; an alpha channel is dropped.
Tensorf load_png(const std::string& path);

/// Writes a [3,H,W] tensor as an 8-bit RGB PNG; values are clamped to [0,1]
/// and quantized by round(v*255).
void save_png(const std::string& path, const Tensorf& image);

}  // namespace npbg
