#pragma once

// Reference implementations used only by tests. Each one follows the defining
// formula directly and shares no code path with the library routine it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "vea/formats.hpp"
#include "vea/maskgen.hpp"

namespace oracle {

/// AUROC by enumerating every (positive, negative) pair.
inline double auroc_pairs(const std::vector<std::uint8_t>& y, const std::vector<double>& p, bool half_ties = false) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (y[j]) continue;
      pairs += 1.0;
      if (p[i] > p[j]) wins += 1.0;
      else if (half_ties && p[i] == p[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

/// NDCG@all from explicit ranks: rank(i) = #{j : p_j > p_i} + #{j < i : p_j == p_i}.
inline double ndcg_direct(const std::vector<std::uint8_t>& y, const std::vector<double>& p) {
  double dcg = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    std::size_t rank = 0;
    for (std::size_t j = 0; j < y.size(); ++j)
      if (p[j] > p[i] || (j < i && p[j] == p[i])) ++rank;
    const double gain = std::pow(2.0, static_cast<double>(y[i])) - 1.0;
    dcg += gain / std::log2(static_cast<double>(rank + 1) + 1.0);
    positives += y[i];
  }
  double idcg = 0.0;
  for (std::size_t k = 1; k <= positives; ++k) idcg += 1.0 / std::log2(static_cast<double>(k) + 1.0);
  return dcg / idcg;
}

/// Neighborhood filter evaluated cell by cell against the untouched input.
inline vea::Field denoise_cellwise(const vea::Field& e, double lambda) {
  vea::Field out(e.rows, e.cols);
  for (std::size_t i = 0; i < e.rows; ++i) {
    for (std::size_t j = 0; j < e.cols; ++j) {
      std::vector<double> nb;
      for (std::size_t p = (i == 0 ? 0 : i - 1); p <= std::min(i + 1, e.rows - 1); ++p)
        for (std::size_t q = (j == 0 ? 0 : j - 1); q <= std::min(j + 1, e.cols - 1); ++q)
          if (p != i || q != j) nb.push_back(e.at(p, q));
      if (!nb.empty() && e.at(i, j) > lambda * *std::max_element(nb.begin(), nb.end())) {
        out.at(i, j) = std::accumulate(nb.begin(), nb.end(), 0.0) / static_cast<double>(nb.size());
      } else {
        out.at(i, j) = e.at(i, j);
      }
    }
  }
  return out;
}

/// Dense 2-D convolution with the normalized k x k Gaussian, evaluated at
/// interior pixel (r, c) (the full kernel support lies inside the field).
inline double gaussian_2d_at(const vea::Field& f, std::size_t r, std::size_t c, std::size_t k, double sigma) {
  const auto rad = static_cast<std::ptrdiff_t>(k / 2);
  double norm = 0.0;
  double acc = 0.0;
  for (std::ptrdiff_t p = -rad; p <= rad; ++p) {
    for (std::ptrdiff_t q = -rad; q <= rad; ++q) {
      const double g = std::exp(-static_cast<double>(p * p + q * q) / (2.0 * sigma * sigma));
      norm += g;
      acc += g * f.at(static_cast<std::size_t>(static_cast<std::ptrdiff_t>(r) - p),
                      static_cast<std::size_t>(static_cast<std::ptrdiff_t>(c) - q));
    }
  }
  return acc / norm;
}

/// Evidence labels by rasterizing every box into a per-pixel bitmap.
inline std::vector<std::uint8_t> labels_per_pixel(const vea::Manifest& m, const std::vector<vea::Box>& boxes) {
  const std::size_t H = m.image_height_px;
  const std::size_t W = m.image_width_px;
  std::vector<std::uint8_t> marked(H * W, 0);
  for (const auto& b : boxes)
    for (std::int64_t y = b.y; y < b.y + b.h; ++y)
      for (std::int64_t x = b.x; x < b.x + b.w; ++x)
        if (y >= 0 && x >= 0 && y < static_cast<std::int64_t>(H) && x < static_cast<std::int64_t>(W))
          marked[static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)] = 1;
  std::vector<std::uint8_t> labels(m.grid_rows * m.grid_cols, 0);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      if (!marked[y * W + x]) continue;
      // patch owning pixel (y, x) under floor partition: largest r with floor(r*H/R) <= y
      std::size_t r = 0;
      while (r + 1 < m.grid_rows && ((r + 1) * H) / m.grid_rows <= y) ++r;
      std::size_t c = 0;
      while (c + 1 < m.grid_cols && ((c + 1) * W) / m.grid_cols <= x) ++c;
      labels[r * m.grid_cols + c] = 1;
    }
  }
  return labels;
}

}  // namespace oracle
