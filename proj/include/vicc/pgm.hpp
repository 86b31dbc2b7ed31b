#pragma once

#include <string>

#include "vicc/image.hpp"

namespace vicc {

/// 8-bit binary PGM, values scaled by 255/peak and clipped. peak <= 0 means
/// use the image's own maximum.
void write_pgm(const std::string& path, const RealImage& img, double peak = 0.0);

}  // namespace vicc
