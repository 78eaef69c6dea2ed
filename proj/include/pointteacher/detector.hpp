#pragma once

#include <array>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pointteacher/geometry.hpp"
#include "pointteacher/matching.hpp"
#include "pointteacher/scenes.hpp"

namespace pointteacher {

// One pyramid level: a 2D grid of channel vectors.
struct GridLevel {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<double> values;  // (y * width + x) * channels + ch

  double at(int x, int y, int ch = 0) const {
    return values[(static_cast<std::size_t>(y) * width + x) * channels + ch];
  }
  double& at(int x, int y, int ch = 0) {
    return values[(static_cast<std::size_t>(y) * width + x) * channels + ch];
  }
};

inline constexpr std::array<double, 5> kLevelStrides = {8, 16, 32, 64, 128};

// P3..P7 built from the scene signal by strided mean pooling; each level has
// half the spatial resolution of the previous one, rounded up.
struct FeatureGrid {
  std::array<GridLevel, 5> levels;  // index 0 -> P3 ... 4 -> P7
};

FeatureGrid build_feature_grid(const Signal& signal, int channels = 1);

// 1x1 mixing matrices for P7..P4 (applied before each upsample-add).
struct FpnWeights {
  int channels = 1;
  std::array<std::vector<double>, 4> level_weights;  // [0] for P7 ... [3] for P4

  static FpnWeights identity(int channels);
  static FpnWeights zeros(int channels);
};

// Top-down aggregation into a single P3-resolution map:
// iterate i = 7..4: P_{i-1} += Up(Conv1x1(P_i)) with nearest 2x upsampling.
GridLevel fpn_aggregate(const FeatureGrid& grid, const FpnWeights& weights);

struct GridShape {
  int cells_x = 0;
  int cells_y = 0;
  double stride = 8.0;

  int cell_count() const { return cells_x * cells_y; }
  Point2D cell_center(int cell) const {
    const int y = cell / cells_x;
    const int x = cell % cells_x;
    return {(x + 0.5) * stride, (y + 0.5) * stride};
  }
};

GridShape grid_shape_for(double width, double height, double stride = 8.0);

// Tabular detector head: per-cell class logits and box parameters
// (tx, ty, tw, th) on the aggregated grid.
struct GridDetectorParams {
  GridShape shape;
  int classes = 0;
  std::vector<double> cls_logits;  // cell * classes
  std::vector<double> box_params;  // cell * 4

  static GridDetectorParams init(const GridShape& shape, int classes);

  double cls(int cell, int c) const { return cls_logits[static_cast<std::size_t>(cell) * classes + c]; }
  double& cls(int cell, int c) { return cls_logits[static_cast<std::size_t>(cell) * classes + c]; }
};

// Box decoding at a cell: cx = center.x + tx*stride, w = stride*exp(tw), ...
OBox decode_cell_box(const GridShape& shape, int cell, std::span<const double, 4> params);
std::array<double, 4> encode_cell_box(const GridShape& shape, int cell, const OBox& box);
OBox decoded_box(const GridDetectorParams& params, int cell);

// Greedy one-to-one assignment of centers to grid cells: centers are
// processed in ascending order of their current nearest-unclaimed-cell L1
// distance; each claims that cell. Returns one cell index per center, -1 when
// the grid ran out of cells. Ties break by center index, then cell index.
std::vector<int> assign_labels(std::span<const Point2D> centers, const GridShape& shape);

// Cells whose max sigmoid class score reaches the threshold become
// predictions carrying the decoded box and all class probabilities.
std::vector<Prediction> predict(const GridDetectorParams& params, double threshold);

struct TeacherState {
  GridDetectorParams params;
  double momentum = 0.999;
};

// teacher <- mu * teacher + (1 - mu) * student, elementwise.
void ema_update(GridDetectorParams& teacher, const GridDetectorParams& student, double mu);

}  // namespace pointteacher
