#pragma once

#include <span>
#include <string>
#include <vector>

#include "pointteacher/geometry.hpp"
#include "pointteacher/rng.hpp"

namespace pointteacher {

struct SceneObject {
  int class_id = 0;
  OBox gt;
};

struct Scene {
  std::string id;
  double width = 0.0;
  double height = 0.0;
  std::vector<SceneObject> objects;
};

struct Dataset {
  Task task = Task::kHbb;
  std::vector<std::string> classes;
  std::vector<Scene> scenes;

  const Scene* find_scene(const std::string& id) const;
};

// object_id links back to the generating object for quality reporting only;
// the training pipeline never reads it.
struct PointAnnotation {
  Point2D p;
  int class_id = 0;
  int object_id = -1;
};

// Simulated annotated point. Offsets are uniform in (-m/2, m/2) of the box
// size; m = 0 lands exactly on the center. OBB applies the size offsets
// through (w*cos(theta), h*sin(theta)). m outside [0, 1] is rejected.
PointAnnotation simulate_point(const OBox& gt, int class_id, double m, Task task,
                               RngStream& rng, int object_id = -1);

// count regions fully inside the scene extent, sides uniform in
// [min_side, max_side]; OBB mode also draws a uniform angle. Throws if the
// range cannot fit the extent or count < 1.
std::vector<OBox> sample_mask_regions(const Scene& scene, int count,
                                      double min_side, double max_side,
                                      Task task, RngStream& rng);

// The scorer-visible stand-in for image evidence: base level everywhere,
// a higher level inside ground-truth boxes, zero inside masked regions.
struct Signal {
  static constexpr double kBaseLevel = 1.0;
  static constexpr double kObjectLevel = 2.0;

  int width = 0;
  int height = 0;
  std::vector<double> values;  // row-major, y * width + x

  static Signal rasterize(const Scene& scene, Task task);

  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  double& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
};

void apply_mask(Signal& signal, std::span<const OBox> regions);

// Summed-area tables over a signal for O(1) rectangle statistics.
struct SignalStats {
  int width = 0;
  int height = 0;
  std::vector<double> sum;     // signal values
  std::vector<double> dev;     // |v - base|
  std::vector<double> dev_x;   // dev * pixel center x
  std::vector<double> dev_y;   // dev * pixel center y
  std::vector<double> blob;    // 1[|v - base| > 0.5]

  static SignalStats build(const Signal& signal);

  struct RectQuery {
    double sum = 0.0, dev = 0.0, dev_x = 0.0, dev_y = 0.0, blob = 0.0;
    double pixels = 0.0;
  };
  // Rectangle [x0, x1) x [y0, y1) in pixels, clipped to the extent.
  RectQuery query(double x0, double y0, double x1, double y1) const;
};

struct SynthConfig {
  int scene_count = 200;
  double width = 192.0;
  double height = 192.0;
  int class_count = 4;
  int min_objects = 3;
  int max_objects = 10;
  double min_size = 8.0;
  double max_size = 24.0;
  double min_center_sep = 20.0;
};

// Random tiny-object scenes for benchmarks and tests.
Dataset synthesize_dataset(const SynthConfig& cfg, Task task, std::uint64_t seed);

std::vector<PointAnnotation> simulate_points_for_scene(const Scene& scene, double m,
                                                       Task task, RngStream& rng);

}  // namespace pointteacher
