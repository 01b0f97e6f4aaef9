#pragma once

#include <cstddef>

namespace vea {

/// Half-open pixel rectangle [row_begin, row_end) x [col_begin, col_end).
struct PixelRect {
  std::size_t row_begin = 0;
  std::size_t row_end = 0;
  std::size_t col_begin = 0;
  std::size_t col_end = 0;

  bool empty() const noexcept { return row_begin >= row_end || col_begin >= col_end; }
  std::size_t area() const noexcept {
    return empty() ? 0 : (row_end - row_begin) * (col_end - col_begin);
  }
};

// Floor partition of `extent` pixels into `parts` bands; band i starts at
// floor(i * extent / parts). Bands tile [0, extent) without gaps.
constexpr std::size_t band_start(std::size_t i, std::size_t parts, std::size_t extent) noexcept {
  return (i * extent) / parts;
}

/// Pixel rectangle covered by patch (row, col) of a grid_rows x grid_cols grid
/// laid over a height x width image.
constexpr PixelRect patch_rect(std::size_t row, std::size_t col, std::size_t grid_rows,
                               std::size_t grid_cols, std::size_t height,
                               std::size_t width) noexcept {
  return PixelRect{band_start(row, grid_rows, height), band_start(row + 1, grid_rows, height),
                   band_start(col, grid_cols, width), band_start(col + 1, grid_cols, width)};
}

}  // namespace vea
