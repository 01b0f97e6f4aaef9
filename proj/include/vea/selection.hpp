#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

namespace vea {

/// Number of layers kept when selecting the top `fraction` of `num_layers`,
/// rounded up and never below one. The epsilon absorbs binary rounding in
/// products such as 0.1 * 30 so that exact multiples do not round up.
inline std::size_t selection_size(std::size_t num_layers, double fraction) {
  const double raw = fraction * static_cast<double>(num_layers);
  auto k = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::clamp<std::size_t>(k, 1, num_layers);
}

/// Indices of the `selection_size` highest scores, ties broken toward the
/// lower index, returned in ascending index order.
inline std::vector<std::size_t> select_top_layers(std::span<const double> scores, double fraction) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(selection_size(scores.size(), fraction));
  std::sort(order.begin(), order.end());
  return order;
}

}  // namespace vea
