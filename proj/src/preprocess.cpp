#include "derm/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace derm::preprocess {

namespace {

void check_k(double k) {
  if (!(k > 0.0 && k <= 1.0)) throw ParameterError("calibration constant k must lie in (0, 1]");
}

double channel_max(const Image& image, int c) {
  const double mx = image.channel(c).maxCoeff();
  if (!(mx > 0.0))
    throw DegenerateChannelError("channel " + std::to_string(c) + " is all zero; no gain is defined");
  return mx;
}

}  // namespace

ColorGains max_rgb_gains(const Image& image, double k) {
  check_k(k);
  ColorGains g;
  g.k = k;
  for (int c = 0; c < 3; ++c) g.gains[c] = k / channel_max(image, c);
  return g;
}

ColorGains shades_of_gray_gains(const Image& image, double p, double k) {
  check_k(k);
  if (!(p >= 1.0)) throw ParameterError("Minkowski exponent p must be >= 1");
  ColorGains g;
  g.k = k;
  for (int c = 0; c < 3; ++c) {
    const double mx = channel_max(image, c);
    // Normalized by the max so large p cannot underflow.
    const double norm = mx * std::pow((image.channel(c) / mx).pow(p).mean(), 1.0 / p);
    g.gains[c] = k / norm;
  }
  return g;
}

Image apply_gains(const Image& image, const ColorGains& gains) {
  Image out = image;
  for (int c = 0; c < 3; ++c) {
    if (gains.gains[c] == 1.0) continue;
    out.channel(c) = (image.channel(c) * gains.gains[c]).min(1.0).max(0.0);
  }
  return out;
}

Image max_rgb(const Image& image, double k) {
  check_k(k);
  Image out = image;
  for (int c = 0; c < 3; ++c) {
    const double mx = channel_max(image, c);
    if (mx == k) continue;
    // (v / max) * k lands the channel max on k exactly, which makes a second
    // pass see unit gains.
    out.channel(c) = ((image.channel(c) / mx) * k).min(1.0).max(0.0);
  }
  return out;
}

Image shades_of_gray(const Image& image, double p, double k) { return apply_gains(image, shades_of_gray_gains(image, p, k)); }

namespace {

// Separable square-window min/max filter with windows clipped at the
// border.
Eigen::ArrayXd window_filter(const Eigen::ArrayXd& src, int h, int w, int r, bool take_max) {
  Eigen::ArrayXd rows(src.size()), out(src.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = take_max ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
      for (int xx = std::max(0, x - r); xx <= std::min(w - 1, x + r); ++xx)
        v = take_max ? std::max(v, src[y * w + xx]) : std::min(v, src[y * w + xx]);
      rows[y * w + x] = v;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = take_max ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
      for (int yy = std::max(0, y - r); yy <= std::min(h - 1, y + r); ++yy)
        v = take_max ? std::max(v, rows[yy * w + x]) : std::min(v, rows[yy * w + x]);
      out[y * w + x] = v;
    }
  return out;
}

}  // namespace

std::vector<bool> hair_mask(const Image& image, int kernel_radius, double threshold) {
  if (kernel_radius < 1) throw ParameterError("morphological kernel radius must be >= 1");
  const int h = image.height, w = image.width;
  const Eigen::ArrayXd lum = 0.299 * image.channel(0) + 0.587 * image.channel(1) + 0.114 * image.channel(2);
  const Eigen::ArrayXd closed =
      window_filter(window_filter(lum, h, w, kernel_radius, true), h, w, kernel_radius, false);
  const Eigen::ArrayXd black_hat = closed - lum;
  std::vector<bool> mask(static_cast<std::size_t>(lum.size()));
  for (Eigen::Index i = 0; i < lum.size(); ++i) mask[static_cast<std::size_t>(i)] = black_hat[i] > threshold;
  return mask;
}

Image morph_hair_removal(const Image& image, int kernel_radius, double threshold) {
  std::vector<bool> pending = hair_mask(image, kernel_radius, threshold);
  const int h = image.height, w = image.width;
  std::size_t remaining = static_cast<std::size_t>(std::count(pending.begin(), pending.end(), true));
  if (remaining == 0) return image;
  if (remaining == pending.size())
    throw InpaintError("hair mask covers the entire image; nothing to inpaint from");

  Image out = image;
  const int r = kernel_radius;
  while (remaining > 0) {
    std::vector<std::size_t> filled;
    Image next = out;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        if (!pending[i]) continue;
        double acc[3] = {0, 0, 0};
        int n = 0;
        for (int yy = std::max(0, y - r); yy <= std::min(h - 1, y + r); ++yy)
          for (int xx = std::max(0, x - r); xx <= std::min(w - 1, x + r); ++xx) {
            if (pending[static_cast<std::size_t>(yy) * w + xx]) continue;
            for (int c = 0; c < 3; ++c) acc[c] += out.at(yy, xx, c);
            ++n;
          }
        if (n == 0) continue;
        for (int c = 0; c < 3; ++c) next.at(y, x, c) = acc[c] / n;
        filled.push_back(i);
      }
    if (filled.empty()) throw InpaintError("masked region unreachable from unmasked pixels");
    for (std::size_t i : filled) pending[i] = false;
    remaining -= filled.size();
    out = std::move(next);
  }
  return out;
}

Image resize(const Image& image, int target_h, int target_w) {
  if (target_h < 1 || target_w < 1) throw ParameterError("resize target must be at least 1x1");
  if (target_h == image.height && target_w == image.width) return image;
  Image out(target_h, target_w);
  const double sy = static_cast<double>(image.height) / target_h;
  const double sx = static_cast<double>(image.width) / target_w;
  for (int y = 0; y < target_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double ty = fy - y0;
    for (int x = 0; x < target_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double tx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = (1 - tx) * image.at(y0, x0, c) + tx * image.at(y0, x1, c);
        const double bottom = (1 - tx) * image.at(y1, x0, c) + tx * image.at(y1, x1, c);
        out.at(y, x, c) = std::clamp((1 - ty) * top + ty * bottom, 0.0, 1.0);
      }
    }
  }
  return out;
}

}  // namespace derm::preprocess
