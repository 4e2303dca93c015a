#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace gridsight {

// Semantic classes carried by each grid cell. Class 0 covers everything that
// is not observed free ground: obstacles, occluded cells, and cells with no
// supporting evidence.
inline constexpr std::uint8_t kClassNonFree = 0;
inline constexpr std::uint8_t kClassRoad = 1;
inline constexpr std::uint8_t kClassSidewalk = 2;
inline constexpr std::uint8_t kClassTerrain = 3;
inline constexpr int kNumClasses = 4;

inline bool is_valid_class(int id) { return id >= 0 && id < kNumClasses; }

// Grid geometry in the vehicle frame: x forward, y left, z up. Row 0 is the
// far edge of the map, column 0 the left edge. The x offset keeps the
// never-visible region directly in front of the vehicle out of the map.
struct GridSpec {
  int rows = 64;
  int cols = 64;
  double cell_size_m = 0.5;
  double x_offset_m = 5.0;

  static GridSpec desk() { return GridSpec{}; }
  // Same 32 x 32 m footprint at quarter-size cells.
  static GridSpec high_res() { return GridSpec{128, 128, 0.25, 5.0}; }

  void validate() const {
    if (rows < 1 || cols < 1) throw std::invalid_argument("GridSpec: rows/cols must be >= 1");
    if (!(cell_size_m > 0.0)) throw std::invalid_argument("GridSpec: cell_size_m must be > 0");
  }

  bool operator==(const GridSpec& o) const {
    return rows == o.rows && cols == o.cols && cell_size_m == o.cell_size_m &&
           x_offset_m == o.x_offset_m;
  }

  // Coverage is half-open: x in [x_min, x_max), y in (y_min, y_max].
  double x_min() const { return x_offset_m; }
  double x_max() const { return x_offset_m + rows * cell_size_m; }
  double y_max() const { return cols * cell_size_m / 2.0; }
  double y_min() const { return -y_max(); }
};

struct GridMap {
  GridSpec spec;
  std::vector<std::uint8_t> classes;    // rows*cols, row-major
  std::vector<std::uint8_t> eval_mask;  // rows*cols, 1 = evaluate

  GridMap() = default;
  explicit GridMap(const GridSpec& s)
      : spec(s),
        classes(static_cast<std::size_t>(s.rows) * s.cols, kClassNonFree),
        eval_mask(static_cast<std::size_t>(s.rows) * s.cols, 1) {
    s.validate();
  }

  std::uint8_t& cls(int i, int j) { return classes[static_cast<std::size_t>(i) * spec.cols + j]; }
  std::uint8_t cls(int i, int j) const {
    return classes[static_cast<std::size_t>(i) * spec.cols + j];
  }
  std::uint8_t& mask(int i, int j) {
    return eval_mask[static_cast<std::size_t>(i) * spec.cols + j];
  }
  std::uint8_t mask(int i, int j) const {
    return eval_mask[static_cast<std::size_t>(i) * spec.cols + j];
  }

  void validate() const {
    spec.validate();
    const std::size_t n = static_cast<std::size_t>(spec.rows) * spec.cols;
    if (classes.size() != n || eval_mask.size() != n) {
      throw std::invalid_argument("GridMap: array dimensions do not match spec");
    }
    for (std::uint8_t c : classes) {
      if (!is_valid_class(c)) throw std::invalid_argument("GridMap: class value outside {0..3}");
    }
  }
};

// Metric center of cell (i, j) in the vehicle frame.
inline std::pair<double, double> cell_center(const GridSpec& spec, int i, int j) {
  if (i < 0 || i >= spec.rows || j < 0 || j >= spec.cols) {
    throw std::out_of_range("cell_center: index out of range");
  }
  const double c = spec.cell_size_m;
  double x = spec.x_offset_m + (spec.rows - 1 - i + 0.5) * c;
  double y = (spec.cols / 2.0) * c - (j + 0.5) * c;
  return {x, y};
}

// Cell containing the metric point, or nothing when outside coverage.
// Inverse of cell_center up to quantization.
inline std::optional<std::pair<int, int>> world_to_cell(const GridSpec& spec, double x, double y) {
  const double c = spec.cell_size_m;
  const double w_half = spec.cols * c / 2.0;
  if (x < spec.x_offset_m || x >= spec.x_offset_m + spec.rows * c) return std::nullopt;
  if (y <= -w_half || y > w_half) return std::nullopt;
  int i = spec.rows - 1 - static_cast<int>(std::floor((x - spec.x_offset_m) / c));
  int j = static_cast<int>(std::floor((w_half - y) / c));
  // The divisions can round across a cell edge for points at the very rim of
  // the coverage test above; clamp keeps those inside.
  i = i < 0 ? 0 : (i >= spec.rows ? spec.rows - 1 : i);
  j = j < 0 ? 0 : (j >= spec.cols ? spec.cols - 1 : j);
  return std::make_pair(i, j);
}

}  // namespace gridsight
