#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gridsight/camera.hpp"
#include "gridsight/class_mapping.hpp"
#include "gridsight/grid.hpp"
#include "gridsight/grid_io.hpp"
#include "gridsight/image.hpp"
#include "gridsight/rng.hpp"

namespace gridsight {

// Front-view label ids emitted by the renderer (Cityscapes-style ids so the
// default mapping reads naturally).
inline constexpr std::uint8_t kLabelRoad = 7;
inline constexpr std::uint8_t kLabelSidewalk = 8;
inline constexpr std::uint8_t kLabelTerrain = 22;
inline constexpr std::uint8_t kLabelSky = 23;
inline constexpr std::uint8_t kLabelObstacle = 26;

inline ClassMapping synth_class_mapping() {
  ClassMapping m;
  m.set_ground(kLabelRoad, kClassRoad);
  m.set_ground(kLabelSidewalk, kClassSidewalk);
  m.set_ground(kLabelTerrain, kClassTerrain);
  return m;
}

inline std::uint8_t label_for_ground_class(std::uint8_t cls) {
  switch (cls) {
    case kClassRoad: return kLabelRoad;
    case kClassSidewalk: return kLabelSidewalk;
    case kClassTerrain: return kLabelTerrain;
    default: return kLabelObstacle;
  }
}

struct ObstacleBox {
  double cx = 0, cy = 0;   // footprint center, vehicle frame
  double sx = 1, sy = 1;   // footprint size
  double height = 2.0;     // above local ground
};

// Parametric world: a road running forward with optional curvature, one
// sidewalk strip per side, terrain beyond, a grade change starting at
// slope_start_m, and box obstacles.
struct SceneSpec {
  double road_half_width_m = 3.5;
  double road_curvature = 0.0;  // 1/m, signed; 0 = straight
  double sidewalk_width_left_m = 2.0;
  double sidewalk_width_right_m = 2.0;
  double slope_grade = 0.0;  // rise/run beyond slope_start_m
  double slope_start_m = 8.0;
  std::vector<ObstacleBox> obstacles;
  std::uint64_t texture_seed = 0;

  void validate(const GridSpec& grid = GridSpec::desk()) const {
    if (road_half_width_m < 0 || sidewalk_width_left_m < 0 || sidewalk_width_right_m < 0) {
      throw std::invalid_argument("SceneSpec: widths must be >= 0");
    }
    if (std::abs(road_curvature) > 0.02) {
      throw std::invalid_argument("SceneSpec: |road_curvature| must be <= 0.02");
    }
    if (std::abs(slope_grade) > 0.15) {
      throw std::invalid_argument("SceneSpec: |slope_grade| must be <= 0.15");
    }
    for (const ObstacleBox& b : obstacles) {
      if (b.sx <= 0 || b.sy <= 0 || b.height <= 0) {
        throw std::invalid_argument("SceneSpec: obstacle dimensions must be > 0");
      }
      if (b.cx - b.sx / 2 < grid.x_min() || b.cx + b.sx / 2 > grid.x_max() ||
          b.cy - b.sy / 2 < grid.y_min() || b.cy + b.sy / 2 > grid.y_max()) {
        throw std::invalid_argument("SceneSpec: obstacle footprint outside grid coverage");
      }
    }
  }

  // Road centerline lateral offset at forward distance x.
  double centerline(double x) const { return 0.5 * road_curvature * x * x; }

  // Ground height; lateral profile is uniform.
  double ground_height(double x) const {
    return x > slope_start_m ? slope_grade * (x - slope_start_m) : 0.0;
  }

  // Top-view layout ignoring obstacles.
  std::uint8_t layout_class(double x, double y) const {
    const double lat = y - centerline(x);
    if (std::abs(lat) <= road_half_width_m) return kClassRoad;
    if (lat > 0 && lat <= road_half_width_m + sidewalk_width_left_m) return kClassSidewalk;
    if (lat < 0 && -lat <= road_half_width_m + sidewalk_width_right_m) return kClassSidewalk;
    return kClassTerrain;
  }

  nlohmann::json to_json() const {
    nlohmann::json obs = nlohmann::json::array();
    for (const ObstacleBox& b : obstacles) {
      obs.push_back({{"cx", b.cx}, {"cy", b.cy}, {"sx", b.sx}, {"sy", b.sy},
                     {"height", b.height}});
    }
    return nlohmann::json{{"road_half_width_m", road_half_width_m},
                          {"road_curvature", road_curvature},
                          {"sidewalk_width_left_m", sidewalk_width_left_m},
                          {"sidewalk_width_right_m", sidewalk_width_right_m},
                          {"slope_grade", slope_grade},
                          {"slope_start_m", slope_start_m},
                          {"obstacles", obs},
                          {"texture_seed", texture_seed}};
  }

  static SceneSpec from_json(const nlohmann::json& j) {
    SceneSpec s;
    s.road_half_width_m = j.value("road_half_width_m", s.road_half_width_m);
    s.road_curvature = j.value("road_curvature", s.road_curvature);
    s.sidewalk_width_left_m = j.value("sidewalk_width_left_m", s.sidewalk_width_left_m);
    s.sidewalk_width_right_m = j.value("sidewalk_width_right_m", s.sidewalk_width_right_m);
    s.slope_grade = j.value("slope_grade", s.slope_grade);
    s.slope_start_m = j.value("slope_start_m", s.slope_start_m);
    s.texture_seed = j.value("texture_seed", s.texture_seed);
    if (j.contains("obstacles")) {
      for (const auto& o : j.at("obstacles")) {
        s.obstacles.push_back({o.at("cx").get<double>(), o.at("cy").get<double>(),
                               o.at("sx").get<double>(), o.at("sy").get<double>(),
                               o.at("height").get<double>()});
      }
    }
    return s;
  }
};

namespace detail {

// 2-D segment / axis-aligned rectangle intersection (slab clipping).
inline bool segment_hits_rect(double x0, double y0, double x1, double y1, double rx0, double ry0,
                              double rx1, double ry1) {
  double t0 = 0.0, t1 = 1.0;
  const double dx = x1 - x0, dy = y1 - y0;
  const double p[4] = {-dx, dx, -dy, dy};
  const double q[4] = {x0 - rx0, rx1 - x0, y0 - ry0, ry1 - y0};
  for (int k = 0; k < 4; ++k) {
    if (p[k] == 0.0) {
      if (q[k] < 0.0) return false;
    } else {
      const double r = q[k] / p[k];
      if (p[k] < 0.0) {
        if (r > t1) return false;
        if (r > t0) t0 = r;
      } else {
        if (r < t0) return false;
        if (r < t1) t1 = r;
      }
    }
  }
  return true;
}

// Deterministic value noise in [0, 1): bilinear interpolation of hashed
// lattice values.
inline double value_noise(double x, double y, std::uint64_t seed) {
  const auto lattice = [seed](std::int64_t ix, std::int64_t iy) {
    std::uint64_t h = seed;
    h ^= static_cast<std::uint64_t>(ix) * 0x9e3779b97f4a7c15ULL;
    h ^= static_cast<std::uint64_t>(iy) * 0xc2b2ae3d27d4eb4fULL;
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
    h ^= h >> 31;
    return static_cast<double>(h >> 11) * 0x1.0p-53;
  };
  const double fx = std::floor(x), fy = std::floor(y);
  const std::int64_t ix = static_cast<std::int64_t>(fx);
  const std::int64_t iy = static_cast<std::int64_t>(fy);
  const double tx = x - fx, ty = y - fy;
  const double a = lattice(ix, iy), b = lattice(ix + 1, iy);
  const double c = lattice(ix, iy + 1), d = lattice(ix + 1, iy + 1);
  return (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
}

struct RayHit {
  double t = std::numeric_limits<double>::infinity();
  std::uint8_t label = kLabelSky;
  double px = 0, py = 0;  // hit point, vehicle frame (for texturing)
};

inline void ray_ground(const SceneSpec& scene, const Vec3& o, const Vec3& w, RayHit& best) {
  constexpr double kMinT = 1e-6;
  // Flat part: z = 0 for x <= slope_start (all x when the grade is zero).
  if (w.z != 0.0) {
    const double t = -o.z / w.z;
    if (t > kMinT && t < best.t) {
      const double x = o.x + t * w.x;
      if (scene.slope_grade == 0.0 || x <= scene.slope_start_m) {
        const double y = o.y + t * w.y;
        best = {t, label_for_ground_class(scene.layout_class(x, y)), x, y};
      }
    }
  }
  // Graded part: z = s * (x - x0) for x >= x0.
  if (scene.slope_grade != 0.0) {
    const double s = scene.slope_grade;
    const double denom = w.z - s * w.x;
    if (denom != 0.0) {
      const double t = (s * (o.x - scene.slope_start_m) - o.z) / denom;
      if (t > kMinT && t < best.t) {
        const double x = o.x + t * w.x;
        if (x >= scene.slope_start_m) {
          const double y = o.y + t * w.y;
          best = {t, label_for_ground_class(scene.layout_class(x, y)), x, y};
        }
      }
    }
  }
}

inline void ray_box(const SceneSpec& scene, const ObstacleBox& box, const Vec3& o, const Vec3& w,
                    RayHit& best) {
  const double z0 = scene.ground_height(box.cx);
  const double lo[3] = {box.cx - box.sx / 2, box.cy - box.sy / 2, z0};
  const double hi[3] = {box.cx + box.sx / 2, box.cy + box.sy / 2, z0 + box.height};
  const double ov[3] = {o.x, o.y, o.z};
  const double wv[3] = {w.x, w.y, w.z};
  double t0 = 1e-6, t1 = best.t;
  for (int a = 0; a < 3; ++a) {
    if (wv[a] == 0.0) {
      if (ov[a] < lo[a] || ov[a] > hi[a]) return;
    } else {
      double ta = (lo[a] - ov[a]) / wv[a];
      double tb = (hi[a] - ov[a]) / wv[a];
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
      if (t0 > t1) return;
    }
  }
  best = {t0, kLabelObstacle, o.x + t0 * w.x, o.y + t0 * w.y};
}

}  // namespace detail

// Analytic top-view truth: layout class at each cell center, obstacle
// footprints and their top-view occlusion shadows (cast from the camera's
// ground position) forced to non-free-space.
inline GridMap true_grid(const SceneSpec& scene, const CameraRig& rig, const GridSpec& spec) {
  scene.validate(spec);
  GridMap map(spec);
  const Vec3 o = rig.camera_origin();
  for (int i = 0; i < spec.rows; ++i) {
    for (int j = 0; j < spec.cols; ++j) {
      auto [x, y] = cell_center(spec, i, j);
      std::uint8_t cls = scene.layout_class(x, y);
      const double half = spec.cell_size_m / 2.0;
      for (const ObstacleBox& b : scene.obstacles) {
        if (std::abs(b.cx - x) < (b.sx / 2 + half) && std::abs(b.cy - y) < (b.sy / 2 + half)) {
          cls = kClassNonFree;
          break;
        }
        if (detail::segment_hits_rect(o.x, o.y, x, y, b.cx - b.sx / 2, b.cy - b.sy / 2,
                                      b.cx + b.sx / 2, b.cy + b.sy / 2)) {
          cls = kClassNonFree;
          break;
        }
      }
      map.cls(i, j) = cls;
    }
  }
  map.eval_mask = fov_mask(rig, spec);
  return map;
}

struct RenderedScene {
  ImageU8 rgb;        // P6
  ImageU8 labels;     // P5 of label ids
  ImageF32 disparity; // PFM, 0 = invalid (sky)
};

// Per-pixel ray cast against the ground planes and obstacle boxes. Disparity
// is fx * baseline / camera-frame depth; sky pixels carry disparity 0.
inline RenderedScene render(const SceneSpec& scene, const CameraRig& rig, int out_width,
                            int out_height) {
  scene.validate();
  RenderedScene out{ImageU8(out_width, out_height, 3), ImageU8(out_width, out_height, 1),
                    ImageF32(out_width, out_height, 1)};
  const Intrinsics& k = rig.intrinsics;
  const Vec3 o = rig.camera_origin();
  // Per-class base colors, modulated below by value noise so appearance is
  // textured rather than a constant color per class.
  const auto base_color = [](std::uint8_t label) -> std::array<double, 3> {
    switch (label) {
      case kLabelRoad: return {95, 95, 105};
      case kLabelSidewalk: return {170, 155, 150};
      case kLabelTerrain: return {95, 145, 75};
      case kLabelObstacle: return {160, 75, 60};
      default: return {140, 170, 215};  // sky
    }
  };

  for (int v = 0; v < out_height; ++v) {
    for (int u = 0; u < out_width; ++u) {
      // Pixel centers at integer coordinates, rescaled to the rig's native
      // intrinsics when rendering at another resolution.
      const double su = (u + 0.5) * k.width / out_width - 0.5;
      const double sv = (v + 0.5) * k.height / out_height - 0.5;
      Vec3 dir_cam{(su - k.cx) / k.fx, (sv - k.cy) / k.fy, 1.0};
      Vec3 w = rig.rotate_to_vehicle(dir_cam);

      detail::RayHit hit;
      detail::ray_ground(scene, o, w, hit);
      for (const ObstacleBox& b : scene.obstacles) detail::ray_box(scene, b, o, w, hit);

      out.labels.at(v, u) = hit.label;
      std::array<double, 3> rgb = base_color(hit.label);
      if (hit.label == kLabelSky) {
        out.disparity.at(v, u) = 0.0f;
        const double fade = 1.0 - 0.35 * (sv / k.height);
        for (int c = 0; c < 3; ++c) rgb[c] *= fade;
      } else {
        out.disparity.at(v, u) = static_cast<float>(k.fx * rig.baseline_m / hit.t);
        const double n =
            detail::value_noise(hit.px * 1.6, hit.py * 1.6, scene.texture_seed ^ hit.label);
        const double n2 =
            detail::value_noise(hit.px * 0.23, hit.py * 0.23, scene.texture_seed * 31 + hit.label);
        const double m = 0.72 + 0.38 * n + 0.18 * n2;
        for (int c = 0; c < 3; ++c) rgb[c] *= m;
      }
      for (int c = 0; c < 3; ++c) {
        out.rgb.at(v, u, c) = static_cast<std::uint8_t>(std::clamp(rgb[c], 0.0, 255.0));
      }
    }
  }
  return out;
}

// Dataset generator configuration. Ranges are sampled per scene from the
// dataset seed; widths snap to the cell lattice so flat-scene boundaries sit
// on cell edges.
struct GenConfig {
  // The focal length keeps ground rows denser than one grid cell out to the
  // far map edge (fy * h >= 2 * x_max^2 per 0.5 m cell), so stereo projection
  // can populate every in-FOV cell; the principal point sits above center to
  // trade sky rows for near-ground coverage.
  int image_width = 1536;
  int image_height = 640;
  CameraRig rig = CameraRig::level(
      Intrinsics{1800.0, 1800.0, 768.0, 192.0, 1536, 640}, 0.22, 1.7);
  GridSpec grid = GridSpec::desk();

  double road_half_width_min = 2.0, road_half_width_max = 6.0;
  double curvature_abs_max = 0.018;
  double straight_fraction = 0.35;  // scenes with exactly zero curvature
  double sidewalk_width_min = 1.5, sidewalk_width_max = 4.0;
  double slope_fraction = 0.5;
  double slope_grade_min = 0.05, slope_grade_max = 0.12;
  double slope_start_min = 6.0, slope_start_max = 12.0;
  int obstacle_count_min = 0, obstacle_count_max = 2;
  double obstacle_size_min = 1.0, obstacle_size_max = 2.2;
  double obstacle_height_min = 1.9, obstacle_height_max = 3.0;
  double obstacle_x_min = 12.0, obstacle_x_max = 30.0;
  double obstacle_y_abs_max = 8.0;

  static GenConfig from_json(const nlohmann::json& j) {
    GenConfig c;
    c.image_width = j.value("image_width", c.image_width);
    c.image_height = j.value("image_height", c.image_height);
    if (j.contains("rig")) c.rig = rig_from_json(j.at("rig"));
    if (j.contains("grid")) {
      const auto& g = j.at("grid");
      c.grid.rows = g.value("rows", c.grid.rows);
      c.grid.cols = g.value("cols", c.grid.cols);
      c.grid.cell_size_m = g.value("cell_size_m", c.grid.cell_size_m);
      c.grid.x_offset_m = g.value("x_offset_m", c.grid.x_offset_m);
    }
    c.road_half_width_min = j.value("road_half_width_min", c.road_half_width_min);
    c.road_half_width_max = j.value("road_half_width_max", c.road_half_width_max);
    c.curvature_abs_max = j.value("curvature_abs_max", c.curvature_abs_max);
    c.straight_fraction = j.value("straight_fraction", c.straight_fraction);
    c.sidewalk_width_min = j.value("sidewalk_width_min", c.sidewalk_width_min);
    c.sidewalk_width_max = j.value("sidewalk_width_max", c.sidewalk_width_max);
    c.slope_fraction = j.value("slope_fraction", c.slope_fraction);
    c.slope_grade_min = j.value("slope_grade_min", c.slope_grade_min);
    c.slope_grade_max = j.value("slope_grade_max", c.slope_grade_max);
    c.slope_start_min = j.value("slope_start_min", c.slope_start_min);
    c.slope_start_max = j.value("slope_start_max", c.slope_start_max);
    c.obstacle_count_min = j.value("obstacle_count_min", c.obstacle_count_min);
    c.obstacle_count_max = j.value("obstacle_count_max", c.obstacle_count_max);
    c.obstacle_size_min = j.value("obstacle_size_min", c.obstacle_size_min);
    c.obstacle_size_max = j.value("obstacle_size_max", c.obstacle_size_max);
    c.obstacle_height_min = j.value("obstacle_height_min", c.obstacle_height_min);
    c.obstacle_height_max = j.value("obstacle_height_max", c.obstacle_height_max);
    c.obstacle_x_min = j.value("obstacle_x_min", c.obstacle_x_min);
    c.obstacle_x_max = j.value("obstacle_x_max", c.obstacle_x_max);
    c.obstacle_y_abs_max = j.value("obstacle_y_abs_max", c.obstacle_y_abs_max);
    return c;
  }
};

// Samples one scene. Deterministic in (config, seed, index); the slope
// stratification interleaves exactly round(n * slope_fraction) graded scenes.
inline SceneSpec sample_scene(const GenConfig& cfg, std::uint64_t dataset_seed, int index,
                              int total) {
  Rng rng(Rng::mix(dataset_seed, static_cast<std::uint64_t>(index)));
  const auto lattice = [&](double lo, double hi) {
    const int steps = static_cast<int>(std::lround((hi - lo) / 0.5));
    return lo + 0.5 * rng.uniform_int(0, steps);
  };

  SceneSpec s;
  s.road_half_width_m = lattice(cfg.road_half_width_min, cfg.road_half_width_max);
  s.sidewalk_width_left_m = lattice(cfg.sidewalk_width_min, cfg.sidewalk_width_max);
  s.sidewalk_width_right_m = lattice(cfg.sidewalk_width_min, cfg.sidewalk_width_max);
  if (rng.uniform() >= cfg.straight_fraction) {
    s.road_curvature = rng.uniform(-cfg.curvature_abs_max, cfg.curvature_abs_max);
  }

  const std::int64_t graded = std::llround(cfg.slope_fraction * total);
  const bool sloped = (static_cast<std::int64_t>(index + 1) * graded) / total >
                      (static_cast<std::int64_t>(index) * graded) / total;
  if (sloped) {
    const double grade = rng.uniform(cfg.slope_grade_min, cfg.slope_grade_max);
    s.slope_grade = rng.uniform() < 0.5 ? grade : -grade;
    s.slope_start_m = rng.uniform(cfg.slope_start_min, cfg.slope_start_max);
  }

  const int n_obstacles = rng.uniform_int(cfg.obstacle_count_min, cfg.obstacle_count_max);
  for (int b = 0; b < n_obstacles; ++b) {
    ObstacleBox box;
    box.sx = rng.uniform(cfg.obstacle_size_min, cfg.obstacle_size_max);
    box.sy = rng.uniform(cfg.obstacle_size_min, cfg.obstacle_size_max);
    box.height = rng.uniform(cfg.obstacle_height_min, cfg.obstacle_height_max);
    box.cx = rng.uniform(cfg.obstacle_x_min, cfg.obstacle_x_max);
    box.cy = rng.uniform(-cfg.obstacle_y_abs_max, cfg.obstacle_y_abs_max);
    box.cy = std::clamp(box.cy, cfg.grid.y_min() + box.sy / 2 + 0.1,
                        cfg.grid.y_max() - box.sy / 2 - 0.1);
    s.obstacles.push_back(box);
  }
  s.texture_seed = rng.next_u64();
  return s;
}

struct ManifestEntry {
  std::string id;
  std::string rgb;
  std::string labels;
  std::string disparity;
  std::string true_grid;
  std::string rig;
  double slope_grade = 0.0;
};

inline std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("malformed manifest line in " + path + ": " + e.what());
    }
    ManifestEntry e;
    e.id = j.at("id").get<std::string>();
    e.rgb = j.at("rgb").get<std::string>();
    e.labels = j.at("labels").get<std::string>();
    e.disparity = j.at("disparity").get<std::string>();
    e.true_grid = j.at("true_grid").get<std::string>();
    e.rig = j.at("rig").get<std::string>();
    e.slope_grade = j.value("slope_grade", 0.0);
    entries.push_back(std::move(e));
  }
  return entries;
}

// Renders n scenes into out_dir and writes a JSON-lines manifest plus the
// shared rig and class-mapping files. Identical seeds produce byte-identical
// trees.
inline std::string generate_dataset(int n, const GenConfig& cfg, std::uint64_t seed,
                                    const std::string& out_dir) {
  if (n < 1) throw std::invalid_argument("generate_dataset: n must be >= 1");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) {
    throw std::runtime_error("unwritable output directory " + out_dir);
  }

  write_rig(cfg.rig, (fs::path(out_dir) / "rig.json").string());
  write_class_mapping(synth_class_mapping(), (fs::path(out_dir) / "mapping.json").string());

  const std::string manifest_path = (fs::path(out_dir) / "manifest.jsonl").string();
  std::ofstream manifest(manifest_path);
  if (!manifest) throw std::runtime_error("cannot write " + manifest_path);

  for (int i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "scene_%04d", i);
    const SceneSpec scene = sample_scene(cfg, seed, i, n);

    RenderedScene r = render(scene, cfg.rig, cfg.image_width, cfg.image_height);
    const std::string rgb_name = std::string(id) + "_rgb.ppm";
    const std::string labels_name = std::string(id) + "_labels.pgm";
    const std::string disp_name = std::string(id) + "_disp.pfm";
    const std::string grid_name = std::string(id) + "_grid";
    write_ppm(r.rgb, (fs::path(out_dir) / rgb_name).string());
    write_pgm(r.labels, (fs::path(out_dir) / labels_name).string());
    write_pfm(r.disparity, (fs::path(out_dir) / disp_name).string());
    write_grid(true_grid(scene, cfg.rig, cfg.grid), (fs::path(out_dir) / grid_name).string());

    nlohmann::json line = {{"id", id},
                           {"rgb", rgb_name},
                           {"labels", labels_name},
                           {"disparity", disp_name},
                           {"true_grid", grid_name + ".json"},
                           {"rig", "rig.json"},
                           {"slope_grade", scene.slope_grade}};
    manifest << line.dump() << "\n";
  }
  return manifest_path;
}

}  // namespace gridsight
