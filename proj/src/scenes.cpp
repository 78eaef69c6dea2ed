#include "pointteacher/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace pointteacher {

const Scene* Dataset::find_scene(const std::string& id) const {
  for (const Scene& s : scenes) {
    if (s.id == id) return &s;
  }
  return nullptr;
}

PointAnnotation simulate_point(const OBox& gt, int class_id, double m, Task task,
                               RngStream& rng, int object_id) {
  if (m < 0.0 || m > 1.0) {
    throw std::invalid_argument("point noise level m must be in [0, 1]");
  }
  const double dx = rng.uniform(-0.5 * m, 0.5 * m);
  const double dy = rng.uniform(-0.5 * m, 0.5 * m);
  PointAnnotation ann;
  ann.class_id = class_id;
  ann.object_id = object_id;
  if (task == Task::kHbb) {
    ann.p = {gt.cx + dx * gt.w, gt.cy + dy * gt.h};
  } else {
    ann.p = {gt.cx + dx * gt.w * std::cos(gt.theta),
             gt.cy + dy * gt.h * std::sin(gt.theta)};
  }
  return ann;
}

std::vector<OBox> sample_mask_regions(const Scene& scene, int count,
                                      double min_side, double max_side,
                                      Task task, RngStream& rng) {
  if (count < 1) throw std::invalid_argument("mask region count must be >= 1");
  if (min_side <= 0.0 || max_side < min_side) {
    throw std::invalid_argument("mask side range must satisfy 0 < min <= max");
  }
  const double diag_factor = task == Task::kObb ? std::numbers::sqrt2 : 1.0;
  if (max_side * diag_factor > std::min(scene.width, scene.height)) {
    throw std::invalid_argument("mask side range does not fit the scene extent");
  }
  std::vector<OBox> regions;
  regions.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double w = rng.uniform(min_side, max_side);
    const double h = rng.uniform(min_side, max_side);
    double theta = 0.0;
    if (task == Task::kObb) {
      theta = rng.uniform(-0.5 * std::numbers::pi, 0.5 * std::numbers::pi);
    }
    // Keep the rotated footprint inside the extent.
    const double hx = 0.5 * (w * std::abs(std::cos(theta)) + h * std::abs(std::sin(theta)));
    const double hy = 0.5 * (w * std::abs(std::sin(theta)) + h * std::abs(std::cos(theta)));
    const double cx = rng.uniform(hx, scene.width - hx);
    const double cy = rng.uniform(hy, scene.height - hy);
    regions.emplace_back(cx, cy, w, h, theta);
  }
  return regions;
}

Signal Signal::rasterize(const Scene& scene, Task task) {
  Signal sig;
  sig.width = static_cast<int>(std::lround(scene.width));
  sig.height = static_cast<int>(std::lround(scene.height));
  sig.values.assign(static_cast<std::size_t>(sig.width) * sig.height, kBaseLevel);
  for (const SceneObject& obj : scene.objects) {
    const HBox bounds = task == Task::kHbb ? to_hbox(obj.gt) : obj.gt.aabb();
    const int x0 = std::max(0, static_cast<int>(std::floor(bounds.x0())));
    const int x1 = std::min(sig.width, static_cast<int>(std::ceil(bounds.x1())));
    const int y0 = std::max(0, static_cast<int>(std::floor(bounds.y0())));
    const int y1 = std::min(sig.height, static_cast<int>(std::ceil(bounds.y1())));
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        const Point2D center{x + 0.5, y + 0.5};
        const bool inside = task == Task::kHbb
                                ? contains_point(to_hbox(obj.gt), center)
                                : contains_point(obj.gt, center);
        if (inside) sig.at(x, y) = kObjectLevel;
      }
    }
  }
  return sig;
}

void apply_mask(Signal& signal, std::span<const OBox> regions) {
  for (const OBox& region : regions) {
    const HBox bounds = region.aabb();
    const int x0 = std::max(0, static_cast<int>(std::floor(bounds.x0())));
    const int x1 = std::min(signal.width, static_cast<int>(std::ceil(bounds.x1())));
    const int y0 = std::max(0, static_cast<int>(std::floor(bounds.y0())));
    const int y1 = std::min(signal.height, static_cast<int>(std::ceil(bounds.y1())));
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        if (contains_point(region, Point2D{x + 0.5, y + 0.5})) {
          signal.at(x, y) = 0.0;
        }
      }
    }
  }
}

SignalStats SignalStats::build(const Signal& signal) {
  SignalStats st;
  st.width = signal.width;
  st.height = signal.height;
  const int w = st.width;
  const int h = st.height;
  const std::size_t n = static_cast<std::size_t>(w + 1) * (h + 1);
  st.sum.assign(n, 0.0);
  st.dev.assign(n, 0.0);
  st.dev_x.assign(n, 0.0);
  st.dev_y.assign(n, 0.0);
  st.blob.assign(n, 0.0);
  auto idx = [w](int x, int y) { return static_cast<std::size_t>(y) * (w + 1) + x; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double v = signal.at(x, y);
      const double d = std::abs(v - Signal::kBaseLevel);
      const double cx = x + 0.5;
      const double cy = y + 0.5;
      const std::size_t cur = idx(x + 1, y + 1);
      st.sum[cur] = v + st.sum[idx(x, y + 1)] + st.sum[idx(x + 1, y)] - st.sum[idx(x, y)];
      st.dev[cur] = d + st.dev[idx(x, y + 1)] + st.dev[idx(x + 1, y)] - st.dev[idx(x, y)];
      st.dev_x[cur] = d * cx + st.dev_x[idx(x, y + 1)] + st.dev_x[idx(x + 1, y)] - st.dev_x[idx(x, y)];
      st.dev_y[cur] = d * cy + st.dev_y[idx(x, y + 1)] + st.dev_y[idx(x + 1, y)] - st.dev_y[idx(x, y)];
      st.blob[cur] = (d > 0.5 ? 1.0 : 0.0) + st.blob[idx(x, y + 1)] + st.blob[idx(x + 1, y)] - st.blob[idx(x, y)];
    }
  }
  return st;
}

SignalStats::RectQuery SignalStats::query(double x0, double y0, double x1,
                                          double y1) const {
  RectQuery q;
  const int ix0 = std::clamp(static_cast<int>(std::floor(x0)), 0, width);
  const int iy0 = std::clamp(static_cast<int>(std::floor(y0)), 0, height);
  const int ix1 = std::clamp(static_cast<int>(std::ceil(x1)), 0, width);
  const int iy1 = std::clamp(static_cast<int>(std::ceil(y1)), 0, height);
  if (ix1 <= ix0 || iy1 <= iy0) return q;
  auto idx = [this](int x, int y) { return static_cast<std::size_t>(y) * (width + 1) + x; };
  auto rect = [&](const std::vector<double>& t) {
    return t[idx(ix1, iy1)] - t[idx(ix0, iy1)] - t[idx(ix1, iy0)] + t[idx(ix0, iy0)];
  };
  q.sum = rect(sum);
  q.dev = rect(dev);
  q.dev_x = rect(dev_x);
  q.dev_y = rect(dev_y);
  q.blob = rect(blob);
  q.pixels = static_cast<double>(ix1 - ix0) * (iy1 - iy0);
  return q;
}

Dataset synthesize_dataset(const SynthConfig& cfg, Task task, std::uint64_t seed) {
  if (cfg.scene_count < 1 || cfg.class_count < 1 || cfg.min_objects < 1 ||
      cfg.max_objects < cfg.min_objects || cfg.min_size <= 0.0 ||
      cfg.max_size < cfg.min_size) {
    throw std::invalid_argument("invalid synthetic dataset parameters");
  }
  static const char* kNames[] = {"vehicle", "ship", "plane", "person",
                                 "storage", "bridge", "wind-mill", "swimming-pool"};
  Dataset data;
  data.task = task;
  for (int c = 0; c < cfg.class_count; ++c) {
    if (c < static_cast<int>(std::size(kNames))) {
      data.classes.emplace_back(kNames[c]);
    } else {
      data.classes.push_back("class" + std::to_string(c));
    }
  }
  RngStream rng(seed, "synth");
  data.scenes.reserve(static_cast<std::size_t>(cfg.scene_count));
  for (int s = 0; s < cfg.scene_count; ++s) {
    Scene scene;
    scene.id = "scene" + std::to_string(s);
    scene.width = cfg.width;
    scene.height = cfg.height;
    const int n_objects =
        cfg.min_objects + static_cast<int>(rng.uniform_index(
                              static_cast<std::size_t>(cfg.max_objects - cfg.min_objects + 1)));
    for (int o = 0; o < n_objects; ++o) {
      SceneObject obj;
      obj.class_id = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(cfg.class_count)));
      for (int attempt = 0; attempt < 200; ++attempt) {
        const double w = rng.uniform(cfg.min_size, cfg.max_size);
        const double h = rng.uniform(cfg.min_size, cfg.max_size);
        double theta = 0.0;
        if (task == Task::kObb) {
          theta = rng.uniform(-0.5 * std::numbers::pi, 0.5 * std::numbers::pi);
        }
        const double hx = 0.5 * (w * std::abs(std::cos(theta)) + h * std::abs(std::sin(theta)));
        const double hy = 0.5 * (w * std::abs(std::sin(theta)) + h * std::abs(std::cos(theta)));
        const double cx = rng.uniform(hx, cfg.width - hx);
        const double cy = rng.uniform(hy, cfg.height - hy);
        bool ok = true;
        for (const SceneObject& other : scene.objects) {
          if (std::abs(other.gt.cx - cx) + std::abs(other.gt.cy - cy) < cfg.min_center_sep) {
            ok = false;
            break;
          }
        }
        if (ok || attempt == 199) {
          obj.gt = OBox(cx, cy, w, h, theta);
          break;
        }
      }
      scene.objects.push_back(obj);
    }
    data.scenes.push_back(std::move(scene));
  }
  return data;
}

std::vector<PointAnnotation> simulate_points_for_scene(const Scene& scene, double m,
                                                       Task task, RngStream& rng) {
  std::vector<PointAnnotation> points;
  points.reserve(scene.objects.size());
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const SceneObject& obj = scene.objects[i];
    points.push_back(simulate_point(obj.gt, obj.class_id, m, task, rng,
                                    static_cast<int>(i)));
  }
  return points;
}

}  // namespace pointteacher
