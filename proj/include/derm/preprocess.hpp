#pragma once

#include <array>
#include <vector>

#include "derm/image.hpp"

namespace derm::preprocess {

/// Multiplicative per-channel correction. Applying `gains` maps each
/// channel's illuminant statistic to the calibration constant `k`.
struct ColorGains {
  std::array<double, 3> gains{1.0, 1.0, 1.0};
  double k = 1.0;
};

/// White-patch gains: k / max(channel).
ColorGains max_rgb_gains(const Image& image, double k = 1.0);

/// Minkowski-norm gains: k / mean(channel^p)^(1/p). p = 1 is gray-world and
/// p -> infinity tends to max_rgb_gains.
ColorGains shades_of_gray_gains(const Image& image, double p, double k = 1.0);

/// Scales channels and clips to [0, 1]. A gain of exactly 1 leaves its
/// channel bit-identical.
Image apply_gains(const Image& image, const ColorGains& gains);

Image max_rgb(const Image& image, double k = 1.0);
Image shades_of_gray(const Image& image, double p, double k = 1.0);

/// Pixels whose black-hat response (grayscale closing minus luminance, square
/// window of the given radius) exceeds `threshold`.
std::vector<bool> hair_mask(const Image& image, int kernel_radius, double threshold);

/// Black-hat hair removal baseline: masked pixels are replaced by the mean of
/// unmasked pixels within `kernel_radius`, filling inwards pass by pass.
/// Unmasked pixels are never modified.
Image morph_hair_removal(const Image& image, int kernel_radius, double threshold);

/// Bilinear resampling with pixel-centre alignment.
Image resize(const Image& image, int target_h, int target_w);

}  // namespace derm::preprocess
