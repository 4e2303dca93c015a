#include <doctest.h>

#include <cmath>

#include "gridsight/camera.hpp"
#include "gridsight/rng.hpp"
#include "test_util.hpp"

using namespace gridsight;

namespace {

CameraRig level_rig(double fx, double fy, double cx, double cy, int w, int h, double height,
                    double baseline = 0.5) {
  return CameraRig::level(Intrinsics{fx, fy, cx, cy, w, h}, baseline, height);
}

}  // namespace

TEST_CASE("disparity_to_depth") {
  CameraRig rig = level_rig(100, 100, 50, 50, 100, 100, 1.5);
  CHECK(disparity_to_depth(10.0, rig) == doctest::Approx(5.0));
  CHECK_THROWS_AS(disparity_to_depth(0.0, rig), std::invalid_argument);
  CHECK_THROWS_AS(disparity_to_depth(-3.0, rig), std::invalid_argument);
  CameraRig cs = level_rig(2262, 2262, 1024, 512, 2048, 1024, 1.2, 0.22);
  CHECK(disparity_to_depth(100.0, cs) == doctest::Approx(4.9764).epsilon(1e-9));
}

TEST_CASE("backproject in the vehicle frame") {
  CameraRig ground = level_rig(100, 200, 50, 50, 100, 100, 0.0);
  // Height zero puts the camera at the vehicle origin.
  ground.cam_to_vehicle[11] = 0.0;
  Vec3 p = backproject(50, 50, 7.0, ground);
  CHECK(p.x == doctest::Approx(7.0));
  CHECK(p.y == doctest::Approx(0.0));
  CHECK(p.z == doctest::Approx(0.0));

  Vec3 q = backproject(50 + 100, 50, 2.0, ground);  // u = cx + fx
  CHECK(q.x == doctest::Approx(2.0));
  CHECK(q.y == doctest::Approx(-2.0));
  CHECK(q.z == doctest::Approx(0.0).epsilon(1e-12));

  CameraRig raised = level_rig(100, 200, 50, 50, 100, 100, 1.5);
  Vec3 r = backproject(50, 50, 3.0, raised);
  CHECK(r.x == doctest::Approx(3.0));
  CHECK(r.y == doctest::Approx(0.0));
  CHECK(r.z == doctest::Approx(1.5));

  CHECK_THROWS_AS(backproject(50, 50, 0.0, raised), std::invalid_argument);
}

TEST_CASE("project then backproject is the identity") {
  CameraRig rig = level_rig(480, 520, 310, 250, 640, 480, 1.4);
  Rng rng(17);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform(0.0, 640.0);
    const double v = rng.uniform(0.0, 480.0);
    const double z = rng.uniform(0.5, 60.0);
    Vec3 p = backproject(u, v, z, rig);
    auto uv = project(p, rig);
    REQUIRE(uv.has_value());
    CHECK(std::abs(uv->first - u) < 1e-6);
    CHECK(std::abs(uv->second - v) < 1e-6);
  }
}

TEST_CASE("ray_ground_intersection") {
  CameraRig rig = level_rig(200, 200, 100, 100, 200, 200, 1.5);
  // Principal point looks along the horizon.
  CHECK_FALSE(ray_ground_intersection(100, 100, rig).has_value());
  // 100 px below the principal row: tan = 0.5, ground at x = 3.
  auto hit = ray_ground_intersection(100, 200, rig);
  REQUIRE(hit.has_value());
  CHECK(hit->first == doctest::Approx(3.0));
  CHECK(hit->second == doctest::Approx(0.0));
  // Above the horizon.
  CHECK_FALSE(ray_ground_intersection(100, 90, rig).has_value());

  // Result always lies on the ground plane (z accumulates to 0 by
  // construction); checked through backprojection consistency instead.
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const double u = rng.uniform(0.0, 200.0);
    const double v = rng.uniform(101.0, 200.0);
    auto g = ray_ground_intersection(u, v, rig);
    REQUIRE(g.has_value());
    auto uv = project({g->first, g->second, 0.0}, rig);
    REQUIRE(uv.has_value());
    CHECK(std::abs(uv->first - u) < 1e-6);
    CHECK(std::abs(uv->second - v) < 1e-6);
  }
}

TEST_CASE("fov_mask matches the analytic wedge for a level 90-degree camera") {
  CameraRig rig = level_rig(100, 100, 100, 100, 200, 200, 1.5);
  GridSpec spec;
  auto mask = fov_mask(rig, spec);

  // Straight-ahead cell at 20 m is evaluable.
  auto cell = world_to_cell(spec, 20.25, 0.25);
  REQUIRE(cell.has_value());
  CHECK(mask[cell->first * 64 + cell->second] == 1);

  int mask_count = 0;
  for (auto m : mask) mask_count += m;
  CHECK(mask_count > 0);
  for (int i = 0; i < spec.rows; ++i) {
    int row_mask = 0, row_analytic = 0;
    for (int j = 0; j < spec.cols; ++j) {
      row_mask += mask[i * 64 + j];
      auto [x, y] = cell_center(spec, i, j);
      // 90-degree horizontal FOV: |y| <= x, and the ground point must fall
      // inside the image vertically.
      const double v = 100.0 + 100.0 * 1.5 / x;
      if (std::abs(y) <= x && v < 200.0) ++row_analytic;
    }
    CHECK(std::abs(row_mask - row_analytic) <= 1);
  }
}

TEST_CASE("cells behind the camera are never evaluable") {
  CameraRig rig = level_rig(100, 100, 100, 100, 200, 200, 1.5);
  // Flip the camera to look backward: negate forward and right axes.
  rig.cam_to_vehicle = {0, 0, -1, 0,  //
                        1, 0, 0, 0,   //
                        0, -1, 0, 1.5,
                        0, 0, 0, 1};
  rig.validate();
  auto mask = fov_mask(rig, GridSpec());
  for (auto m : mask) CHECK(m == 0);
}

TEST_CASE("fov_mask is monotone in image width") {
  CameraRig wide = level_rig(100, 100, 100, 100, 200, 200, 1.5);
  CameraRig narrow = wide;
  narrow.intrinsics.width = 120;
  narrow.intrinsics.cx = 60;
  GridSpec spec;
  auto wide_mask = fov_mask(wide, spec);
  auto narrow_mask = fov_mask(narrow, spec);
  for (std::size_t k = 0; k < wide_mask.size(); ++k) {
    if (narrow_mask[k]) CHECK(wide_mask[k]);
  }
}

TEST_CASE("align_to_reference: identity, FOV crop, vanishing point") {
  Rng rng(4);
  CameraRig ref = level_rig(250, 250, 200, 120, 400, 240, 1.5);
  ImageU8 img(400, 240, 1);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(rng.next_u32() & 0xff);

  SUBCASE("identical rigs give the identity") {
    AlignResult r = align_to_reference(img, ref, ref, Interp::kNearest);
    CHECK(r.image.data == img.data);
    CHECK(r.intrinsics.fx == doctest::Approx(ref.intrinsics.fx));
    CHECK(r.intrinsics.cy == doctest::Approx(ref.intrinsics.cy));
  }

  SUBCASE("wide source is cropped to the reference FOV") {
    CameraRig src = level_rig(500, 500, 500, 240, 1000, 480, 1.5);
    ImageU8 wide_img(1000, 480, 1);
    for (auto& v : wide_img.data) v = static_cast<std::uint8_t>(rng.next_u32() & 0xff);
    AlignResult r = align_to_reference(wide_img, src, ref);
    CHECK(r.image.width == 400);
    CHECK(r.image.height == 240);
    // Matching horizontal FOV implies fxScaled == ref.fx.
    CHECK(r.intrinsics.fx == doctest::Approx(250.0).epsilon(1e-2));
    const double src_fov = src.intrinsics.horizontal_fov();
    const double out_fov = 2.0 * std::atan2(r.intrinsics.width / 2.0, r.intrinsics.fx);
    CHECK(out_fov == doctest::Approx(ref.intrinsics.horizontal_fov()).epsilon(1e-2));
    CHECK(out_fov < src_fov);
  }

  SUBCASE("vanishing-point alignment shifts by the cy offset") {
    CameraRig src = ref;
    src.intrinsics.cy = 110;  // 10 px above the reference principal row
    AlignResult r = align_to_reference(img, src, ref, Interp::kNearest);
    CHECK(r.intrinsics.cy == doctest::Approx(ref.intrinsics.cy).epsilon(1e-9));
    // Content moves down by 10 px: output row 20 reads source row 10.
    CHECK(r.image.at(20, 37) == img.at(10, 37));
  }

  SUBCASE("narrower source FOV is an error") {
    CameraRig narrow = level_rig(400, 400, 200, 120, 400, 240, 1.5);
    CHECK_THROWS_AS(align_to_reference(img, narrow, ref), std::invalid_argument);
  }
}

TEST_CASE("calibration JSON round trip and validation") {
  testutil::TempDir tmp("rig");
  CameraRig rig = level_rig(1800, 1800, 768, 192, 1536, 640, 1.7, 0.22);
  write_rig(rig, tmp.str("rig.json"));
  CameraRig back = read_rig(tmp.str("rig.json"));
  CHECK(back.intrinsics.fx == rig.intrinsics.fx);
  CHECK(back.baseline_m == rig.baseline_m);
  CHECK(back.cam_to_vehicle == rig.cam_to_vehicle);

  CameraRig bad = rig;
  bad.cam_to_vehicle[0] = 0.5;  // not orthonormal
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = rig;
  bad.baseline_m = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  Intrinsics bad_k{0.0, 1.0, 1.0, 1.0, 2, 2};
  CHECK_THROWS_AS(bad_k.validate(), std::invalid_argument);
}
