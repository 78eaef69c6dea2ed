#include "pointteacher/detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace pointteacher {

namespace {

int ceil_div(int a, int b) { return (a + b - 1) / b; }

GridLevel pool_half(const GridLevel& src) {
  GridLevel dst;
  dst.width = ceil_div(src.width, 2);
  dst.height = ceil_div(src.height, 2);
  dst.channels = src.channels;
  dst.values.assign(static_cast<std::size_t>(dst.width) * dst.height * dst.channels, 0.0);
  for (int y = 0; y < dst.height; ++y) {
    for (int x = 0; x < dst.width; ++x) {
      for (int ch = 0; ch < src.channels; ++ch) {
        double sum = 0.0;
        int n = 0;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int sx = 2 * x + dx;
            const int sy = 2 * y + dy;
            if (sx < src.width && sy < src.height) {
              sum += src.at(sx, sy, ch);
              ++n;
            }
          }
        }
        dst.at(x, y, ch) = n > 0 ? sum / n : 0.0;
      }
    }
  }
  return dst;
}

}  // namespace

FeatureGrid build_feature_grid(const Signal& signal, int channels) {
  if (channels != 1) {
    throw std::invalid_argument("build_feature_grid: only 1 signal channel is produced");
  }
  FeatureGrid grid;
  GridLevel& p3 = grid.levels[0];
  p3.width = ceil_div(signal.width, 8);
  p3.height = ceil_div(signal.height, 8);
  p3.channels = 1;
  p3.values.assign(static_cast<std::size_t>(p3.width) * p3.height, 0.0);
  for (int y = 0; y < p3.height; ++y) {
    for (int x = 0; x < p3.width; ++x) {
      double sum = 0.0;
      int n = 0;
      for (int sy = 8 * y; sy < std::min(8 * y + 8, signal.height); ++sy) {
        for (int sx = 8 * x; sx < std::min(8 * x + 8, signal.width); ++sx) {
          sum += signal.at(sx, sy);
          ++n;
        }
      }
      p3.at(x, y) = n > 0 ? sum / n : 0.0;
    }
  }
  for (int l = 1; l < 5; ++l) grid.levels[l] = pool_half(grid.levels[l - 1]);
  return grid;
}

FpnWeights FpnWeights::identity(int channels) {
  FpnWeights w;
  w.channels = channels;
  for (auto& mat : w.level_weights) {
    mat.assign(static_cast<std::size_t>(channels) * channels, 0.0);
    for (int c = 0; c < channels; ++c) mat[static_cast<std::size_t>(c) * channels + c] = 1.0;
  }
  return w;
}

FpnWeights FpnWeights::zeros(int channels) {
  FpnWeights w;
  w.channels = channels;
  for (auto& mat : w.level_weights) {
    mat.assign(static_cast<std::size_t>(channels) * channels, 0.0);
  }
  return w;
}

GridLevel fpn_aggregate(const FeatureGrid& grid, const FpnWeights& weights) {
  const int ch = grid.levels[0].channels;
  if (weights.channels != ch) {
    throw std::invalid_argument("fpn_aggregate: weight channel mismatch");
  }
  for (const auto& mat : weights.level_weights) {
    if (mat.size() != static_cast<std::size_t>(ch) * ch) {
      throw std::invalid_argument("fpn_aggregate: weight matrix shape mismatch");
    }
  }
  std::array<GridLevel, 5> acc = grid.levels;
  // i = 7 -> 4 in spec terms: levels index 4 -> 1.
  for (int l = 4; l >= 1; --l) {
    const GridLevel& upper = acc[l];
    GridLevel& lower = acc[l - 1];
    const std::vector<double>& mat = weights.level_weights[4 - l];
    for (int y = 0; y < lower.height; ++y) {
      for (int x = 0; x < lower.width; ++x) {
        const int ux = std::min(x / 2, upper.width - 1);
        const int uy = std::min(y / 2, upper.height - 1);
        for (int co = 0; co < ch; ++co) {
          double mixed = 0.0;
          for (int ci = 0; ci < ch; ++ci) {
            mixed += mat[static_cast<std::size_t>(co) * ch + ci] * upper.at(ux, uy, ci);
          }
          lower.at(x, y, co) += mixed;
        }
      }
    }
  }
  return acc[0];
}

GridShape grid_shape_for(double width, double height, double stride) {
  GridShape s;
  s.stride = stride;
  s.cells_x = ceil_div(static_cast<int>(std::lround(width)), static_cast<int>(stride));
  s.cells_y = ceil_div(static_cast<int>(std::lround(height)), static_cast<int>(stride));
  return s;
}

GridDetectorParams GridDetectorParams::init(const GridShape& shape, int classes) {
  GridDetectorParams p;
  p.shape = shape;
  p.classes = classes;
  p.cls_logits.assign(static_cast<std::size_t>(shape.cell_count()) * classes, 0.0);
  p.box_params.assign(static_cast<std::size_t>(shape.cell_count()) * 4, 0.0);
  return p;
}

OBox decode_cell_box(const GridShape& shape, int cell, std::span<const double, 4> params) {
  const Point2D c = shape.cell_center(cell);
  return OBox(c.x + params[0] * shape.stride, c.y + params[1] * shape.stride,
              shape.stride * std::exp(params[2]), shape.stride * std::exp(params[3]), 0.0);
}

std::array<double, 4> encode_cell_box(const GridShape& shape, int cell, const OBox& box) {
  const Point2D c = shape.cell_center(cell);
  return {(box.cx - c.x) / shape.stride, (box.cy - c.y) / shape.stride,
          std::log(box.w / shape.stride), std::log(box.h / shape.stride)};
}

OBox decoded_box(const GridDetectorParams& params, int cell) {
  return decode_cell_box(params.shape, cell,
                         std::span<const double, 4>(
                             params.box_params.data() + static_cast<std::size_t>(cell) * 4, 4));
}

std::vector<int> assign_labels(std::span<const Point2D> centers, const GridShape& shape) {
  std::vector<int> assignment(centers.size(), -1);
  std::vector<bool> claimed(static_cast<std::size_t>(shape.cell_count()), false);
  std::vector<bool> done(centers.size(), false);
  const std::size_t rounds = std::min<std::size_t>(
      centers.size(), static_cast<std::size_t>(shape.cell_count()));
  for (std::size_t round = 0; round < rounds; ++round) {
    int best_center = -1;
    int best_cell = -1;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < centers.size(); ++i) {
      if (done[i]) continue;
      // Nearest unclaimed cell for this center.
      for (int cell = 0; cell < shape.cell_count(); ++cell) {
        if (claimed[static_cast<std::size_t>(cell)]) continue;
        const Point2D cc = shape.cell_center(cell);
        const double d = std::abs(cc.x - centers[i].x) + std::abs(cc.y - centers[i].y);
        if (d < best_dist ||
            (d == best_dist && (best_center == -1 || static_cast<int>(i) < best_center))) {
          best_dist = d;
          best_center = static_cast<int>(i);
          best_cell = cell;
        }
      }
    }
    if (best_center < 0) break;
    assignment[static_cast<std::size_t>(best_center)] = best_cell;
    claimed[static_cast<std::size_t>(best_cell)] = true;
    done[static_cast<std::size_t>(best_center)] = true;
  }
  return assignment;
}

std::vector<Prediction> predict(const GridDetectorParams& params, double threshold) {
  std::vector<Prediction> preds;
  for (int cell = 0; cell < params.shape.cell_count(); ++cell) {
    double best = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < params.classes; ++c) best = std::max(best, params.cls(cell, c));
    const double best_prob = 1.0 / (1.0 + std::exp(-best));
    if (best_prob < threshold) continue;
    Prediction p;
    p.cell = cell;
    p.box = decoded_box(params, cell);
    p.scores.resize(static_cast<std::size_t>(params.classes));
    for (int c = 0; c < params.classes; ++c) {
      p.scores[static_cast<std::size_t>(c)] = 1.0 / (1.0 + std::exp(-params.cls(cell, c)));
    }
    preds.push_back(std::move(p));
  }
  return preds;
}

void ema_update(GridDetectorParams& teacher, const GridDetectorParams& student, double mu) {
  if (mu <= 0.0 || mu >= 1.0) throw std::invalid_argument("ema momentum must be in (0, 1)");
  if (teacher.cls_logits.size() != student.cls_logits.size() ||
      teacher.box_params.size() != student.box_params.size()) {
    throw std::invalid_argument("ema_update: teacher/student shape mismatch");
  }
  const double inv = 1.0 - mu;
  for (std::size_t i = 0; i < teacher.cls_logits.size(); ++i) {
    teacher.cls_logits[i] = mu * teacher.cls_logits[i] + inv * student.cls_logits[i];
  }
  for (std::size_t i = 0; i < teacher.box_params.size(); ++i) {
    teacher.box_params[i] = mu * teacher.box_params[i] + inv * student.box_params[i];
  }
}

}  // namespace pointteacher
