#pragma once

// Evidence mask pipeline:
//   aggregate (mean of normalized patch attention over the grounding layers)
//   -> denoise (isolated spikes replaced by their neighborhood mean)
//   -> upsample to pixels -> Gaussian smooth -> min-max normalize.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "vea/attention.hpp"
#include "vea/error.hpp"
#include "vea/formats.hpp"
#include "vea/grid.hpp"

namespace vea {

/// Row-major rows x cols grid of doubles. Used for patch grids and pixel fields.
struct Field {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Field() = default;
  Field(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
  Field(std::size_t r, std::size_t c, std::vector<double> v) : rows(r), cols(c), values(std::move(v)) {}

  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  bool operator==(const Field&) const = default;
};

using PatchGridScores = Field;
using PixelField = Field;

/// How smooth_strength maps to the Gaussian. Kernel: strength * shorter side
/// is the kernel size k and sigma = k / 6. Direct: strength * shorter side is
/// sigma itself and k = 2 * ceil(3 sigma) + 1.
enum class SigmaMode { Kernel, Direct };

struct MaskConfig {
  double lambda = 10.0;
  double smooth_strength = 0.5;
  double alpha = 0.5;
  std::optional<double> binarize_threshold;
  SigmaMode sigma_mode = SigmaMode::Kernel;

  void validate() const {
    if (!(lambda > 1.0)) throw Error(ErrorCode::InvariantViolation, "lambda must be > 1");
    if (!(smooth_strength >= 0.0 && smooth_strength <= 1.0))
      throw Error(ErrorCode::InvariantViolation, "smooth strength must be in [0, 1]");
    if (!(alpha >= 0.0 && alpha <= 1.0))
      throw Error(ErrorCode::InvariantViolation, "alpha must be in [0, 1]");
    if (binarize_threshold && !(*binarize_threshold > 0.0 && *binarize_threshold < 1.0))
      throw Error(ErrorCode::InvariantViolation, "binarize threshold must be in (0, 1)");
  }
};

inline PatchGridScores aggregate_evidence(const AttentionDump& dump, const LayerProfile& profile) {
  const Manifest& m = dump.manifest;
  if (profile.num_layers != m.num_layers)
    throw Error(ErrorCode::LayerMismatch, m.sample_id + ": profile num_layers " +
                                              std::to_string(profile.num_layers) + " != dump num_layers " +
                                              std::to_string(m.num_layers));
  if (profile.selected_layers.empty())
    throw Error(ErrorCode::InvariantViolation, "profile selects no layers");
  PatchGridScores grid(m.grid_rows, m.grid_cols);
  for (std::size_t layer : profile.selected_layers) {
    const PatchAttention pv = patch_vector(dump, layer);
    for (std::size_t i = 0; i < pv.values.size(); ++i) grid.values[i] += pv.values[i];
  }
  const auto count = static_cast<double>(profile.selected_layers.size());
  for (double& v : grid.values) v /= count;
  return grid;
}

/// Replaces every cell that exceeds lambda times the maximum of its in-bounds
/// 3x3 neighbors by the neighbors' mean. All decisions read the input grid.
inline PatchGridScores denoise(const PatchGridScores& grid, double lambda) {
  PatchGridScores out = grid;
  const auto rows = static_cast<std::ptrdiff_t>(grid.rows);
  const auto cols = static_cast<std::ptrdiff_t>(grid.cols);
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    for (std::ptrdiff_t c = 0; c < cols; ++c) {
      double sum = 0.0;
      double peak = 0.0;
      std::size_t n = 0;
      for (std::ptrdiff_t dr = -1; dr <= 1; ++dr) {
        for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
          const std::ptrdiff_t rr = r + dr;
          const std::ptrdiff_t cc = c + dc;
          if ((dr == 0 && dc == 0) || rr < 0 || cc < 0 || rr >= rows || cc >= cols) continue;
          const double v = grid.at(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
          peak = n == 0 ? v : std::max(peak, v);
          sum += v;
          ++n;
        }
      }
      if (n == 0) continue;
      const auto ur = static_cast<std::size_t>(r);
      const auto uc = static_cast<std::size_t>(c);
      if (grid.at(ur, uc) > lambda * peak) out.at(ur, uc) = sum / static_cast<double>(n);
    }
  }
  return out;
}

/// Nearest-neighbor block fill using the same floor-partition rectangles as
/// patch labelling.
inline PixelField upsample_to_pixels(const PatchGridScores& grid, std::size_t height, std::size_t width) {
  if (height < grid.rows || width < grid.cols || grid.rows == 0 || grid.cols == 0)
    throw Error(ErrorCode::DimensionError, std::to_string(grid.rows) + "x" + std::to_string(grid.cols) +
                                               " grid onto " + std::to_string(height) + "x" +
                                               std::to_string(width) + " pixels");
  PixelField field(height, width);
  for (std::size_t r = 0; r < grid.rows; ++r) {
    for (std::size_t c = 0; c < grid.cols; ++c) {
      const PixelRect rect = patch_rect(r, c, grid.rows, grid.cols, height, width);
      for (std::size_t y = rect.row_begin; y < rect.row_end; ++y)
        std::fill_n(field.values.begin() + static_cast<std::ptrdiff_t>(y * width + rect.col_begin),
                    rect.col_end - rect.col_begin, grid.at(r, c));
    }
  }
  return field;
}

struct GaussianKernel {
  std::size_t size = 0;
  double sigma = 0.0;
  /// Unnormalized taps exp(-d^2 / 2 sigma^2) for d = -radius..radius.
  std::vector<double> taps;

  std::size_t radius() const { return size / 2; }
};

/// Kernel derived from the smoothing strength and the shorter image side.
inline GaussianKernel make_smoothing_kernel(double smooth_strength, std::size_t shorter_side,
                                            SigmaMode mode = SigmaMode::Kernel) {
  GaussianKernel k;
  const double extent = smooth_strength * static_cast<double>(shorter_side);
  if (mode == SigmaMode::Kernel) {
    // nearest odd integer, ties (even integers) rounding up
    k.size = 2 * static_cast<std::size_t>(std::floor(extent / 2.0)) + 1;
    k.size = std::max<std::size_t>(k.size, 3);
    k.sigma = static_cast<double>(k.size) / 6.0;
  } else {
    k.sigma = std::max(extent, 1e-3);
    k.size = 2 * static_cast<std::size_t>(std::ceil(3.0 * k.sigma)) + 1;
  }
  const auto r = static_cast<std::ptrdiff_t>(k.radius());
  k.taps.resize(k.size);
  for (std::ptrdiff_t d = -r; d <= r; ++d)
    k.taps[static_cast<std::size_t>(d + r)] =
        std::exp(-static_cast<double>(d * d) / (2.0 * k.sigma * k.sigma));
  return k;
}

namespace detail {

// One 1-D pass along rows (horizontal) or columns. Each output is the
// centre value plus the kernel-weighted mean of differences to it, with the
// kernel renormalized over the in-bounds taps. Constant runs therefore come
// out bit-identical, and clamping to the input range removes rounding spill.
inline PixelField convolve_1d(const PixelField& in, const GaussianKernel& k, bool horizontal,
                              double lo, double hi) {
  PixelField out(in.rows, in.cols);
  const auto r = static_cast<std::ptrdiff_t>(k.radius());
  const auto len = static_cast<std::ptrdiff_t>(horizontal ? in.cols : in.rows);
  const std::size_t lines = horizontal ? in.rows : in.cols;
  for (std::size_t line = 0; line < lines; ++line) {
    auto value = [&](std::ptrdiff_t pos) {
      const auto p = static_cast<std::size_t>(pos);
      return horizontal ? in.at(line, p) : in.at(p, line);
    };
    for (std::ptrdiff_t pos = 0; pos < len; ++pos) {
      const double centre = value(pos);
      const std::ptrdiff_t from = std::max<std::ptrdiff_t>(-r, -pos);
      const std::ptrdiff_t to = std::min<std::ptrdiff_t>(r, len - 1 - pos);
      double weight = 0.0;
      double acc = 0.0;
      for (std::ptrdiff_t d = from; d <= to; ++d) {
        const double w = k.taps[static_cast<std::size_t>(d + r)];
        weight += w;
        acc += w * (value(pos + d) - centre);
      }
      const double v = std::clamp(centre + acc / weight, lo, hi);
      const auto p = static_cast<std::size_t>(pos);
      (horizontal ? out.at(line, p) : out.at(p, line)) = v;
    }
  }
  return out;
}

}  // namespace detail

/// Separable Gaussian smoothing at pixel resolution. Strength 0 returns the
/// input unchanged.
inline PixelField gaussian_smooth(const PixelField& field, double smooth_strength,
                                  SigmaMode mode = SigmaMode::Kernel) {
  if (!(smooth_strength >= 0.0 && smooth_strength <= 1.0))
    throw Error(ErrorCode::InvariantViolation, "smooth strength must be in [0, 1]");
  if (smooth_strength == 0.0 || field.values.empty()) return field;
  const GaussianKernel k = make_smoothing_kernel(smooth_strength, std::min(field.rows, field.cols), mode);
  const auto [lo, hi] = std::minmax_element(field.values.begin(), field.values.end());
  const PixelField rows_done = detail::convolve_1d(field, k, true, *lo, *hi);
  return detail::convolve_1d(rows_done, k, false, *lo, *hi);
}

/// Min-max rescale to [0, 1]; a constant field becomes all ones.
inline PixelField normalize_mask(const PixelField& field) {
  PixelField out = field;
  if (field.values.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(field.values.begin(), field.values.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!(hi > lo)) {
    std::fill(out.values.begin(), out.values.end(), 1.0);
    return out;
  }
  for (double& v : out.values) v = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
  return out;
}

inline PixelField binarize(const PixelField& field, double threshold) {
  PixelField out = field;
  for (double& v : out.values) v = v >= threshold ? 1.0 : 0.0;
  return out;
}

/// Every intermediate stage of one mask build.
struct MaskStages {
  PatchGridScores aggregated;
  PatchGridScores denoised;
  PixelField upsampled;
  PixelField smoothed;
  PixelField mask;
};

inline MaskStages build_mask_stages(const AttentionDump& dump, const LayerProfile& profile,
                                    const MaskConfig& config) {
  config.validate();
  MaskStages s;
  s.aggregated = aggregate_evidence(dump, profile);
  s.denoised = denoise(s.aggregated, config.lambda);
  s.upsampled = upsample_to_pixels(s.denoised, dump.manifest.image_height_px, dump.manifest.image_width_px);
  s.smoothed = gaussian_smooth(s.upsampled, config.smooth_strength, config.sigma_mode);
  s.mask = normalize_mask(s.smoothed);
  if (config.binarize_threshold) s.mask = binarize(s.mask, *config.binarize_threshold);
  return s;
}

inline PixelField build_mask(const AttentionDump& dump, const LayerProfile& profile,
                             const MaskConfig& config) {
  return build_mask_stages(dump, profile, config).mask;
}

inline MaskPayload to_payload(const std::string& sample_id, const PixelField& field) {
  MaskPayload p{sample_id, field.cols, field.rows, std::vector<float>(field.values.size())};
  for (std::size_t i = 0; i < field.values.size(); ++i) p.values[i] = static_cast<float>(field.values[i]);
  return p;
}

inline PixelField from_payload(const MaskPayload& payload) {
  PixelField f(payload.height, payload.width);
  for (std::size_t i = 0; i < payload.values.size(); ++i) f.values[i] = payload.values[i];
  return f;
}

}  // namespace vea
