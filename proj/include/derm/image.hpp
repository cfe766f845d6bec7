#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <string>

#include "derm/error.hpp"

namespace derm {

/// H x W x 3 RGB image with values in [0, 1], stored interleaved (HWC).
struct Image {
  int height = 0;
  int width = 0;
  Eigen::ArrayXd data;

  Image() = default;
  Image(int h, int w, double fill = 0.0) : height(h), width(w), data(Eigen::ArrayXd::Constant(3L * h * w, fill)) {
    if (h < 1 || w < 1) throw DimensionError("image extent must be positive");
  }

  Eigen::Index pixels() const { return static_cast<Eigen::Index>(height) * width; }
  Eigen::Index index(int y, int x, int c) const { return (static_cast<Eigen::Index>(y) * width + x) * 3 + c; }
  double& at(int y, int x, int c) { return data[index(y, x, c)]; }
  double at(int y, int x, int c) const { return data[index(y, x, c)]; }

  /// Strided view of one channel.
  auto channel(int c) const { return Eigen::Map<const Eigen::ArrayXd, 0, Eigen::InnerStride<3>>(data.data() + c, pixels()); }
  auto channel(int c) { return Eigen::Map<Eigen::ArrayXd, 0, Eigen::InnerStride<3>>(data.data() + c, pixels()); }

  friend bool operator==(const Image& a, const Image& b) {
    return a.height == b.height && a.width == b.width && (a.data == b.data).all();
  }
};

/// Per-pixel mean squared error over all channels. Throws DimensionError on
/// shape mismatch.
double mse(const Image& a, const Image& b);

/// 8-bit RGB PNG IO. Values map to bytes by round(v * 255) and back by /255.
/// write_png goes through a temp file and a rename.
Image read_png(const std::filesystem::path& path);
void write_png(const Image& image, const std::filesystem::path& path);

/// Quantizes to the 8-bit grid that a PNG round trip produces.
Image quantize8(const Image& image);

}  // namespace derm
