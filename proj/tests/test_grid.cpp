#include <doctest.h>

#include <fstream>

#include "gridsight/grid.hpp"
#include "gridsight/grid_io.hpp"
#include "gridsight/rng.hpp"
#include "test_util.hpp"

using namespace gridsight;

TEST_CASE("cell_center matches the stated convention") {
  GridSpec spec;
  auto [x0, y0] = cell_center(spec, 0, 0);
  CHECK(x0 == doctest::Approx(36.75));
  CHECK(y0 == doctest::Approx(15.75));
  auto [x1, y1] = cell_center(spec, 63, 32);
  CHECK(x1 == doctest::Approx(5.25));
  CHECK(y1 == doctest::Approx(-0.25));
  auto [x2, y2] = cell_center(spec, 32, 31);
  CHECK(x2 == doctest::Approx(20.75));
  CHECK(y2 == doctest::Approx(0.25));
  CHECK_THROWS_AS(cell_center(spec, 64, 0), std::out_of_range);
  CHECK_THROWS_AS(cell_center(spec, 0, -1), std::out_of_range);
}

TEST_CASE("world_to_cell boundary arithmetic") {
  GridSpec spec;
  CHECK(world_to_cell(spec, 5.0, 0.0) == std::make_pair(63, 32));
  CHECK(world_to_cell(spec, 20.25, -3.1) == std::make_pair(33, 38));
  CHECK_FALSE(world_to_cell(spec, 37.0, 0.0).has_value());
  // Half-open edges: y_max included, y_min excluded.
  CHECK(world_to_cell(spec, 5.0, 16.0) == std::make_pair(63, 0));
  CHECK_FALSE(world_to_cell(spec, 5.0, -16.0).has_value());
  CHECK_FALSE(world_to_cell(spec, 4.999, 0.0).has_value());
  CHECK(world_to_cell(spec, 36.999, 0.0)->first == 0);
}

TEST_CASE("cell round trip is exhaustive on both default specs") {
  for (const GridSpec& spec : {GridSpec::desk(), GridSpec::high_res()}) {
    for (int i = 0; i < spec.rows; ++i) {
      for (int j = 0; j < spec.cols; ++j) {
        auto [x, y] = cell_center(spec, i, j);
        auto cell = world_to_cell(spec, x, y);
        REQUIRE(cell.has_value());
        CHECK(cell->first == i);
        CHECK(cell->second == j);
      }
    }
  }
}

TEST_CASE("default footprint covers x in [5,37) and y in (-16,16]") {
  GridSpec spec;
  CHECK(spec.x_min() == doctest::Approx(5.0));
  CHECK(spec.x_max() == doctest::Approx(37.0));
  CHECK(spec.y_min() == doctest::Approx(-16.0));
  CHECK(spec.y_max() == doctest::Approx(16.0));
  // High-res mode keeps the same footprint.
  GridSpec hi = GridSpec::high_res();
  CHECK(hi.x_max() == doctest::Approx(37.0));
  CHECK(hi.y_max() == doctest::Approx(16.0));
}

TEST_CASE("grid file round trip preserves classes and mask") {
  testutil::TempDir tmp("grid");
  GridMap map((GridSpec()));
  for (int i = 0; i < 64; ++i) {
    for (int j = 0; j < 64; ++j) {
      map.cls(i, j) = kClassRoad;
      map.mask(i, j) = (i + j) % 3 != 0;
    }
  }
  write_grid(map, tmp.str("m"));
  GridMap back = read_grid(tmp.str("m.json"));
  CHECK(back.spec == map.spec);
  CHECK(back.classes == map.classes);
  CHECK(back.eval_mask == map.eval_mask);
}

TEST_CASE("grid file with class value outside 0..3 is rejected") {
  testutil::TempDir tmp("gridbad");
  GridMap map((GridSpec()));
  write_grid(map, tmp.str("m"));
  {
    // Corrupt one pixel of the class image to 7.
    std::fstream f(tmp.str("m.pgm"), std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-1, std::ios::end);
    char v = 7;
    f.write(&v, 1);
  }
  CHECK_THROWS_WITH_AS(read_grid(tmp.str("m.json")), doctest::Contains("class value"),
                       std::runtime_error);
}

TEST_CASE("grid metadata dimension mismatch is rejected") {
  testutil::TempDir tmp("griddim");
  GridMap map((GridSpec()));
  write_grid(map, tmp.str("m"));
  {
    std::ofstream meta(tmp.str("m.json"));
    meta << R"({"rows": 32, "cols": 64, "cell_size_m": 0.5, "x_offset_m": 5.0,)"
         << R"( "mask_file": "m_mask.pgm"})";
  }
  CHECK_THROWS_AS(read_grid(tmp.str("m.json")), std::runtime_error);
}

TEST_CASE("serialization round trip is bit-exact for 10000 random maps") {
  testutil::TempDir tmp("gridrand");
  Rng rng(314159);
  for (int iter = 0; iter < 10000; ++iter) {
    GridSpec spec;
    spec.rows = rng.uniform_int(1, 40);
    spec.cols = rng.uniform_int(1, 40);
    spec.cell_size_m = rng.uniform(0.1, 2.0);
    spec.x_offset_m = rng.uniform(-3.0, 10.0);
    GridMap map(spec);
    for (auto& c : map.classes) c = static_cast<std::uint8_t>(rng.uniform_int(0, 3));
    for (auto& m : map.eval_mask) m = static_cast<std::uint8_t>(rng.uniform_int(0, 1));
    write_grid(map, tmp.str("r"));
    GridMap back = read_grid(tmp.str("r.json"));
    REQUIRE(back.spec == map.spec);
    REQUIRE(back.classes == map.classes);
    REQUIRE(back.eval_mask == map.eval_mask);
  }
}

TEST_CASE("GridMap validation catches malformed values") {
  GridMap map((GridSpec()));
  map.classes[5] = 9;
  CHECK_THROWS_AS(map.validate(), std::invalid_argument);
  GridSpec bad;
  bad.rows = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = GridSpec();
  bad.cell_size_m = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
