#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "vea/error.hpp"
#include "vea/formats.hpp"
#include "vea/grid.hpp"
#include "vea/maskgen.hpp"
#include "vea/rng.hpp"

namespace vea {

/// 8-bit RGB image, row-major, top-left origin.
struct RasterImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  RasterImage() = default;
  RasterImage(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), pixels(h * w * 3, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }

  bool operator==(const RasterImage&) const = default;
};

/// Float to 8-bit: round half away from zero, then clamp to [0, 255].
inline std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
}

/// Scales every pixel by alpha + (1 - alpha) * mask. The rounded result is
/// never allowed below the alpha floor alpha * I.
inline RasterImage highlight(const RasterImage& image, const PixelField& mask, double alpha) {
  if (mask.rows != image.height || mask.cols != image.width)
    throw Error(ErrorCode::DimensionMismatch,
                "mask " + std::to_string(mask.rows) + "x" + std::to_string(mask.cols) + " vs image " +
                    std::to_string(image.height) + "x" + std::to_string(image.width));
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::InvariantViolation, "alpha must be in [0, 1]");
  for (double v : mask.values)
    if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorCode::MaskOutOfRange, std::to_string(v));

  RasterImage out = image;
  for (std::size_t p = 0; p < image.height * image.width; ++p) {
    const double factor = alpha + (1.0 - alpha) * mask.values[p];
    for (std::size_t c = 0; c < 3; ++c) {
      const double in = image.pixels[p * 3 + c];
      const double floor_value = std::ceil(alpha * in - 1e-9);
      out.pixels[p * 3 + c] = to_u8(std::max(std::round(factor * in), floor_value));
    }
  }
  return out;
}

inline constexpr double kNoiseMean = 128.0;
inline constexpr double kNoiseStddev = 64.0;

/// Blends the image with clamped Gaussian noise N(128, 64): strength 1 is pure
/// noise. Draws are taken in row-major pixel, then channel, order.
inline RasterImage perturb_noise(const RasterImage& image, double strength, std::uint64_t seed) {
  if (!(strength >= 0.0 && strength <= 1.0))
    throw Error(ErrorCode::InvariantViolation, "noise strength must be in [0, 1]");
  SeededRng rng(seed);
  RasterImage out = image;
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    const double noise = std::clamp(rng.normal(kNoiseMean, kNoiseStddev), 0.0, 255.0);
    out.pixels[i] = to_u8((1.0 - strength) * image.pixels[i] + strength * noise);
  }
  return out;
}

/// Area-average downscale to out_h x out_w. Each output pixel averages the
/// source pixels under its footprint, weighted by fractional coverage.
inline RasterImage box_downscale(const RasterImage& image, std::size_t out_h, std::size_t out_w) {
  if (out_h < 1 || out_w < 1 || out_h > image.height || out_w > image.width)
    throw Error(ErrorCode::DegenerateSize, std::to_string(out_h) + "x" + std::to_string(out_w));

  // coverage[o] = list of (source index, weight) along one axis
  auto coverage = [](std::size_t in, std::size_t out) {
    std::vector<std::vector<std::pair<std::size_t, double>>> cov(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      const double a = static_cast<double>(o) * scale;
      const double b = static_cast<double>(o + 1) * scale;
      for (auto s = static_cast<std::size_t>(std::floor(a)); s < in && static_cast<double>(s) < b; ++s) {
        const double w = std::min(b, static_cast<double>(s + 1)) - std::max(a, static_cast<double>(s));
        if (w > 0.0) cov[o].emplace_back(s, w);
      }
    }
    return cov;
  };
  const auto rows = coverage(image.height, out_h);
  const auto cols = coverage(image.width, out_w);

  RasterImage out(out_h, out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    for (std::size_t x = 0; x < out_w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        double weight = 0.0;
        for (const auto& [sy, wy] : rows[y])
          for (const auto& [sx, wx] : cols[x]) {
            acc += wy * wx * image.at(sy, sx, c);
            weight += wy * wx;
          }
        out.at(y, x, c) = to_u8(acc / weight);
      }
    }
  }
  return out;
}

/// Nearest-neighbor resize; destination pixel (y, x) reads source
/// (floor(y * h / H), floor(x * w / W)).
inline RasterImage nearest_resize(const RasterImage& image, std::size_t out_h, std::size_t out_w) {
  RasterImage out(out_h, out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const std::size_t sy = y * image.height / out_h;
    for (std::size_t x = 0; x < out_w; ++x) {
      const std::size_t sx = x * image.width / out_w;
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = image.at(sy, sx, c);
    }
  }
  return out;
}

/// Side lengths kept when removing `pixel_reduction` of the pixels.
inline std::pair<std::size_t, std::size_t> reduced_size(std::size_t height, std::size_t width,
                                                        double pixel_reduction) {
  if (!(pixel_reduction >= 0.0 && pixel_reduction < 1.0))
    throw Error(ErrorCode::DegenerateSize, "pixel reduction must be in [0, 1)");
  const double f = std::sqrt(1.0 - pixel_reduction);
  auto side = [f](std::size_t n) {
    return static_cast<std::size_t>(std::ceil(f * static_cast<double>(n) - 1e-9));
  };
  const std::size_t h = side(height);
  const std::size_t w = side(width);
  if (h < 1 || w < 1) throw Error(ErrorCode::DegenerateSize, std::to_string(h) + "x" + std::to_string(w));
  return {h, w};
}

/// Low-resolution perturbation: box-filter down to sqrt(1 - reduction) of
/// each side, then nearest-neighbor back to the original size.
inline RasterImage perturb_downsample(const RasterImage& image, double pixel_reduction) {
  const auto [h, w] = reduced_size(image.height, image.width, pixel_reduction);
  if (h == image.height && w == image.width) return image;
  return nearest_resize(box_downscale(image, h, w), image.height, image.width);
}

/// Blacks out floor(fraction * m) distinct patches chosen uniformly at random
/// (partial Fisher-Yates over patch indices).
inline RasterImage perturb_mask_patches(const RasterImage& image, const Manifest& manifest, double fraction,
                                        std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw Error(ErrorCode::InvariantViolation, "mask fraction must be in [0, 1]");
  const std::size_t m = manifest.grid_rows * manifest.grid_cols;
  const auto k = std::min<std::size_t>(
      m, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(m) + 1e-9)));
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  SeededRng rng(seed);
  for (std::size_t i = 0; i < k; ++i) std::swap(order[i], order[i + rng.below(m - i)]);

  RasterImage out = image;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t r = order[i] / manifest.grid_cols;
    const std::size_t c = order[i] % manifest.grid_cols;
    const PixelRect rect = patch_rect(r, c, manifest.grid_rows, manifest.grid_cols, image.height, image.width);
    for (std::size_t y = rect.row_begin; y < rect.row_end; ++y)
      for (std::size_t x = rect.col_begin; x < rect.col_end; ++x)
        for (std::size_t ch = 0; ch < 3; ++ch) out.at(y, x, ch) = 0;
  }
  return out;
}

}  // namespace vea
