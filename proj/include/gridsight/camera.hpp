#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "gridsight/grid.hpp"
#include "gridsight/image.hpp"

namespace gridsight {

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

// Pinhole intrinsics for a rectified camera. Pixel coordinates are continuous
// with integer values at pixel centers.
struct Intrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("Intrinsics: fx, fy must be > 0");
    if (!(cx > 0.0 && cx < width) || !(cy > 0.0 && cy < height)) {
      throw std::invalid_argument("Intrinsics: principal point must lie inside the image");
    }
  }

  double horizontal_fov() const { return 2.0 * std::atan2(width / 2.0, fx); }
};

// Camera frame: x right, y down, z forward. Vehicle frame: x forward,
// y left, z up. cam_to_vehicle is a 4x4 rigid transform, row-major.
struct CameraRig {
  Intrinsics intrinsics;
  double baseline_m = 0;
  std::array<double, 16> cam_to_vehicle{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};

  void validate() const {
    intrinsics.validate();
    if (!(baseline_m > 0.0)) throw std::invalid_argument("CameraRig: baseline_m must be > 0");
    const auto& m = cam_to_vehicle;
    // Rotation part orthonormal with determinant +1 (tolerance 1e-9).
    double det = m[0] * (m[5] * m[10] - m[6] * m[9]) - m[1] * (m[4] * m[10] - m[6] * m[8]) +
                 m[2] * (m[4] * m[9] - m[5] * m[8]);
    if (std::abs(det - 1.0) > 1e-9) {
      throw std::invalid_argument("CameraRig: rotation determinant must be +1");
    }
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        double dot = 0;
        for (int k = 0; k < 3; ++k) dot += m[k * 4 + a] * m[k * 4 + b];
        if (std::abs(dot - (a == b ? 1.0 : 0.0)) > 1e-9) {
          throw std::invalid_argument("CameraRig: rotation must be orthonormal");
        }
      }
    }
    if (std::abs(m[12]) > 0 || std::abs(m[13]) > 0 || std::abs(m[14]) > 0 ||
        std::abs(m[15] - 1.0) > 0) {
      throw std::invalid_argument("CameraRig: last transform row must be (0,0,0,1)");
    }
  }

  Vec3 to_vehicle(const Vec3& p) const {
    const auto& m = cam_to_vehicle;
    return {m[0] * p.x + m[1] * p.y + m[2] * p.z + m[3],
            m[4] * p.x + m[5] * p.y + m[6] * p.z + m[7],
            m[8] * p.x + m[9] * p.y + m[10] * p.z + m[11]};
  }

  Vec3 rotate_to_vehicle(const Vec3& v) const {
    const auto& m = cam_to_vehicle;
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[4] * v.x + m[5] * v.y + m[6] * v.z,
            m[8] * v.x + m[9] * v.y + m[10] * v.z};
  }

  // Rigid inverse: transpose rotation, back-rotate translation.
  Vec3 to_camera(const Vec3& p) const {
    const auto& m = cam_to_vehicle;
    const double dx = p.x - m[3], dy = p.y - m[7], dz = p.z - m[11];
    return {m[0] * dx + m[4] * dy + m[8] * dz, m[1] * dx + m[5] * dy + m[9] * dz,
            m[2] * dx + m[6] * dy + m[10] * dz};
  }

  Vec3 camera_origin() const {
    return {cam_to_vehicle[3], cam_to_vehicle[7], cam_to_vehicle[11]};
  }

  // Forward-looking level camera mounted height_m above the ground plane.
  static CameraRig level(const Intrinsics& intr, double baseline_m, double height_m) {
    CameraRig rig;
    rig.intrinsics = intr;
    rig.baseline_m = baseline_m;
    // Camera x-right -> vehicle -y, y-down -> -z, z-forward -> +x.
    rig.cam_to_vehicle = {0, 0, 1, 0,   //
                          -1, 0, 0, 0,  //
                          0, -1, 0, height_m,
                          0, 0, 0, 1};
    return rig;
  }
};

// Z = fx * baseline / d. Disparity d <= 0 marks an invalid measurement.
inline double disparity_to_depth(double d, const CameraRig& rig) {
  if (!(d > 0.0)) throw std::invalid_argument("disparity_to_depth: invalid disparity (d <= 0)");
  return rig.intrinsics.fx * rig.baseline_m / d;
}

// Pixel + depth -> 3-D point in the vehicle frame.
inline Vec3 backproject(double u, double v, double depth_m, const CameraRig& rig) {
  if (!(depth_m > 0.0)) throw std::invalid_argument("backproject: nonpositive depth");
  const auto& k = rig.intrinsics;
  Vec3 cam{(u - k.cx) * depth_m / k.fx, (v - k.cy) * depth_m / k.fy, depth_m};
  return rig.to_vehicle(cam);
}

// Vehicle-frame point -> pixel coordinates; empty when the point is not in
// front of the camera (camera-frame z <= 0).
inline std::optional<std::pair<double, double>> project(const Vec3& p_vehicle,
                                                        const CameraRig& rig) {
  Vec3 c = rig.to_camera(p_vehicle);
  if (!(c.z > 0.0)) return std::nullopt;
  const auto& k = rig.intrinsics;
  return std::make_pair(k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy);
}

// Intersection of the pixel ray with the z = 0 ground plane, in vehicle
// coordinates. Horizon and upward rays, or a camera at or below the ground,
// yield empty.
inline std::optional<std::pair<double, double>> ray_ground_intersection(double u, double v,
                                                                        const CameraRig& rig) {
  const auto& k = rig.intrinsics;
  Vec3 dir_cam{(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0};
  Vec3 w = rig.rotate_to_vehicle(dir_cam);
  Vec3 o = rig.camera_origin();
  if (!(w.z < 0.0) || !(o.z > 0.0)) return std::nullopt;
  const double t = -o.z / w.z;
  return std::make_pair(o.x + t * w.x, o.y + t * w.y);
}

// Cell is evaluable iff its center, lifted to ground height 0, projects in
// front of the camera and inside the image.
inline std::vector<std::uint8_t> fov_mask(const CameraRig& rig, const GridSpec& spec) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(spec.rows) * spec.cols, 0);
  for (int i = 0; i < spec.rows; ++i) {
    for (int j = 0; j < spec.cols; ++j) {
      auto [x, y] = cell_center(spec, i, j);
      auto uv = project({x, y, 0.0}, rig);
      if (!uv) continue;
      auto [u, v] = *uv;
      if (u >= 0.0 && u < rig.intrinsics.width && v >= 0.0 && v < rig.intrinsics.height) {
        mask[static_cast<std::size_t>(i) * spec.cols + j] = 1;
      }
    }
  }
  return mask;
}

struct AlignResult {
  ImageU8 image;
  Intrinsics intrinsics;
};

// Crops the source symmetrically about the principal column until its
// horizontal FOV matches the reference, shifts vertically so the principal
// row lands on the reference principal row after scaling, then resamples to
// the reference resolution. Label images should pass Interp::kNearest.
inline AlignResult align_to_reference(const ImageU8& image, const CameraRig& src_rig,
                                      const CameraRig& ref_rig,
                                      Interp interp = Interp::kBilinear) {
  const Intrinsics& src = src_rig.intrinsics;
  const Intrinsics& ref = ref_rig.intrinsics;
  if (image.width != src.width || image.height != src.height) {
    throw std::invalid_argument("align_to_reference: image does not match source intrinsics");
  }
  const double half_tan_ref = (ref.width / 2.0) / ref.fx;
  if (src.horizontal_fov() + 1e-12 < ref.horizontal_fov()) {
    throw std::invalid_argument("align_to_reference: source FOV narrower than reference");
  }

  // Horizontal crop to the reference FOV, symmetric about cx.
  const int half_w = static_cast<int>(std::lround(src.fx * half_tan_ref));
  const int crop_w = std::min(2 * half_w, src.width);
  const int left = std::clamp(static_cast<int>(std::lround(src.cx)) - crop_w / 2, 0,
                              src.width - crop_w);
  const double scale = static_cast<double>(ref.width) / crop_w;

  // Vertical shift aligning the principal row after scaling.
  const int shift = static_cast<int>(std::lround(ref.cy / scale - src.cy));

  ImageU8 out(ref.width, ref.height, image.channels);
  for (int y = 0; y < ref.height; ++y) {
    const double sy = (y + 0.5) / scale - 0.5 - shift;
    for (int x = 0; x < ref.width; ++x) {
      const double sx = left + (x + 0.5) / scale - 0.5;
      if (interp == Interp::kNearest) {
        int iy = std::clamp(static_cast<int>(std::lround(sy)), 0, image.height - 1);
        int ix = std::clamp(static_cast<int>(std::lround(sx)), 0, image.width - 1);
        for (int c = 0; c < image.channels; ++c) out.at(y, x, c) = image.at(iy, ix, c);
      } else {
        int y0 = static_cast<int>(std::floor(sy));
        int x0 = static_cast<int>(std::floor(sx));
        double wy = sy - y0, wx = sx - x0;
        int y0c = std::clamp(y0, 0, image.height - 1);
        int y1c = std::clamp(y0 + 1, 0, image.height - 1);
        int x0c = std::clamp(x0, 0, image.width - 1);
        int x1c = std::clamp(x0 + 1, 0, image.width - 1);
        for (int c = 0; c < image.channels; ++c) {
          double v =
              (1 - wy) * ((1 - wx) * image.at(y0c, x0c, c) + wx * image.at(y0c, x1c, c)) +
              wy * ((1 - wx) * image.at(y1c, x0c, c) + wx * image.at(y1c, x1c, c));
          out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v));
        }
      }
    }
  }

  Intrinsics adjusted;
  adjusted.fx = src.fx * scale;
  adjusted.fy = src.fy * scale;
  adjusted.cx = (src.cx - left) * scale;
  adjusted.cy = (src.cy + shift) * scale;
  adjusted.width = ref.width;
  adjusted.height = ref.height;
  return {std::move(out), adjusted};
}

// Calibration JSON: intrinsics, stereo baseline, and the 16 row-major
// cam_to_vehicle entries.
inline nlohmann::json rig_to_json(const CameraRig& rig) {
  return nlohmann::json{{"fx", rig.intrinsics.fx},
                        {"fy", rig.intrinsics.fy},
                        {"cx", rig.intrinsics.cx},
                        {"cy", rig.intrinsics.cy},
                        {"width", rig.intrinsics.width},
                        {"height", rig.intrinsics.height},
                        {"baseline_m", rig.baseline_m},
                        {"cam_to_vehicle", rig.cam_to_vehicle}};
}

inline CameraRig rig_from_json(const nlohmann::json& j) {
  CameraRig rig;
  try {
    rig.intrinsics.fx = j.at("fx").get<double>();
    rig.intrinsics.fy = j.at("fy").get<double>();
    rig.intrinsics.cx = j.at("cx").get<double>();
    rig.intrinsics.cy = j.at("cy").get<double>();
    rig.intrinsics.width = j.at("width").get<int>();
    rig.intrinsics.height = j.at("height").get<int>();
    rig.baseline_m = j.at("baseline_m").get<double>();
    auto m = j.at("cam_to_vehicle").get<std::vector<double>>();
    if (m.size() != 16) throw std::invalid_argument("cam_to_vehicle must have 16 entries");
    std::copy(m.begin(), m.end(), rig.cam_to_vehicle.begin());
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("malformed calibration JSON: ") + e.what());
  }
  rig.validate();
  return rig;
}

inline CameraRig read_rig(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed calibration JSON " + path + ": " + e.what());
  }
  return rig_from_json(j);
}

inline void write_rig(const CameraRig& rig, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << rig_to_json(rig).dump(2) << "\n";
}

}  // namespace gridsight
