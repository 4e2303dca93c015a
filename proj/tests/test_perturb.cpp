#include <doctest.h>

#include <set>

#include "gridsight/perturb.hpp"
#include "gridsight/rng.hpp"
#include "gridsight/synth.hpp"

using namespace gridsight;

namespace {

ImageU8 row_ramp(int w, int h) {
  ImageU8 img(w, h, 1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) img.at(y, x) = static_cast<std::uint8_t>(y % 251);
  }
  return img;
}

}  // namespace

TEST_CASE("apply_pitch shifts by round(fy tan theta)") {
  ImageU8 img = row_ramp(8, 128);

  SUBCASE("zero angle is the identity") {
    ImageU8 out = apply_pitch(img, 200.0, 0.0);
    CHECK(out.data == img.data);
  }
  SUBCASE("fy=200, 1.5 degrees -> 5 px") {
    ImageU8 out = apply_pitch(img, 200.0, 1.5);
    CHECK(out.at(40, 3) == img.at(45, 3));
    CHECK(out.at(127, 0) == img.at(127, 0));  // bottom edge replicated
  }
  SUBCASE("fy=2262, 1.5 degrees -> 59 px") {
    ImageU8 out = apply_pitch(img, 2262.0, 1.5);
    CHECK(out.at(30, 0) == img.at(89, 0));
  }
  SUBCASE("negative pitch shifts content down") {
    ImageU8 out = apply_pitch(img, 200.0, -1.5);
    CHECK(out.at(40, 3) == img.at(35, 3));
    CHECK(out.at(0, 0) == img.at(0, 0));  // top edge replicated
  }
  SUBCASE("angle out of range") {
    CHECK_THROWS_AS(apply_pitch(img, 200.0, 45.0), std::invalid_argument);
    CHECK_THROWS_AS(apply_pitch(img, 200.0, -60.0), std::invalid_argument);
  }
}

TEST_CASE("pitch round trip is the identity away from the replicated border") {
  ImageU8 img = row_ramp(16, 128);
  ImageU8 there = apply_pitch(img, 200.0, 1.5);   // shift 5
  ImageU8 back = apply_pitch(there, 200.0, -1.5);  // shift -5
  CHECK(back.same_size(img));
  for (int y = 5; y < 128 - 5; ++y) {
    for (int x = 0; x < 16; ++x) REQUIRE(back.at(y, x) == img.at(y, x));
  }
}

TEST_CASE("apply_roll") {
  SUBCASE("zero angle is the identity") {
    ImageU8 img = row_ramp(32, 24);
    CHECK(apply_roll(img, 0.0, Interp::kBilinear).data == img.data);
    CHECK(apply_roll(img, 0.0, Interp::kNearest).data == img.data);
  }
  SUBCASE("angle out of range") {
    ImageU8 img = row_ramp(8, 8);
    CHECK_THROWS_AS(apply_roll(img, 91.0, Interp::kNearest), std::invalid_argument);
  }
  SUBCASE("nearest-neighbor rotation only emits input label ids") {
    Rng rng(31);
    ImageU8 labels(64, 48, 1);
    for (auto& v : labels.data) v = static_cast<std::uint8_t>(rng.uniform_int(0, 3) * 9);
    std::set<std::uint8_t> input_ids(labels.data.begin(), labels.data.end());
    for (double deg : {-37.0, 5.0, 88.0}) {
      ImageU8 out = apply_roll(labels, deg, Interp::kNearest);
      for (auto v : out.data) CHECK(input_ids.count(v) == 1);
    }
  }
  SUBCASE("smooth image survives a +-5 degree round trip away from borders") {
    // Smooth low-frequency image so bilinear interpolation error stays small.
    ImageU8 img(96, 96, 1);
    for (int y = 0; y < 96; ++y) {
      for (int x = 0; x < 96; ++x) {
        img.at(y, x) = static_cast<std::uint8_t>(
            127.0 + 60.0 * std::sin(x * 0.07) + 50.0 * std::cos(y * 0.05));
      }
    }
    ImageU8 back = apply_roll(apply_roll(img, 5.0, Interp::kBilinear), -5.0, Interp::kBilinear);
    double mad = 0;
    int count = 0;
    for (int y = 16; y < 80; ++y) {
      for (int x = 16; x < 80; ++x) {
        mad += std::abs(static_cast<double>(back.at(y, x)) - img.at(y, x));
        ++count;
      }
    }
    mad /= count;
    CHECK(mad < 0.02 * 255.0);
  }
  SUBCASE("dimensions are always preserved") {
    ImageU8 img = row_ramp(33, 21);
    CHECK(apply_roll(img, 17.0, Interp::kBilinear).same_size(img));
    CHECK(apply_pitch(img, 150.0, 3.0).same_size(img));
  }
}

TEST_CASE("perturbations operate on RGB images too") {
  GenConfig cfg;
  SceneSpec scene = sample_scene(cfg, 3, 0, 2);
  RenderedScene r = render(scene, cfg.rig, 256, 128);
  ImageU8 pitched = apply_pitch(r.rgb, cfg.rig.intrinsics.fy, 1.5);
  CHECK(pitched.same_size(r.rgb));
  ImageU8 rolled = apply_roll(r.rgb, -5.0, Interp::kBilinear);
  CHECK(rolled.same_size(r.rgb));
}
