#include <doctest.h>

#include <cmath>

#include "gridsight/pca.hpp"
#include "gridsight/rng.hpp"
#include "test_util.hpp"

using namespace gridsight;

TEST_CASE("pca recovers the axis of a 2-D line exactly") {
  Rng rng(41);
  std::vector<std::vector<float>> points;
  for (int i = 0; i < 400; ++i) {
    const float t = rng.normal_f32();
    points.push_back({t, 2.0f * t});
  }
  PcaModel m = pca_fit(points);
  const double s5 = std::sqrt(5.0);
  CHECK(std::abs(m.axis(0, 0) - 1.0 / s5) < 1e-6);
  CHECK(std::abs(m.axis(1, 0) - 2.0 / s5) < 1e-6);
  CHECK(m.eigenvalues[1] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(m.eigenvalues[0] > 0.0);
}

TEST_CASE("pca eigenvalues of an isotropic Gaussian stay within 10 percent") {
  Rng rng(42);
  std::vector<std::vector<float>> points;
  for (int i = 0; i < 10000; ++i) {
    points.push_back({rng.normal_f32(), rng.normal_f32(), rng.normal_f32()});
  }
  PcaModel m = pca_fit(points);
  CHECK(m.eigenvalues[0] / m.eigenvalues[2] < 1.1);
  CHECK(m.eigenvalues[0] >= m.eigenvalues[1]);
  CHECK(m.eigenvalues[1] >= m.eigenvalues[2]);
}

TEST_CASE("pca axes are orthonormal") {
  Rng rng(43);
  const std::size_t L = 16;
  std::vector<std::vector<float>> points;
  for (int i = 0; i < 200; ++i) {
    std::vector<float> p(L);
    for (auto& v : p) v = rng.normal_f32() * (1.0f + (i % 5));
    points.push_back(std::move(p));
  }
  PcaModel m = pca_fit(points);
  for (std::size_t a = 0; a < L; ++a) {
    for (std::size_t b = 0; b < L; ++b) {
      double dot = 0;
      for (std::size_t r = 0; r < L; ++r) dot += m.axis(r, a) * m.axis(r, b);
      CHECK(std::abs(dot - (a == b ? 1.0 : 0.0)) < 1e-6);
    }
  }

  SUBCASE("projection onto all axes reconstructs the embeddings") {
    for (int i = 0; i < 10; ++i) {
      std::vector<double> coeffs(L, 0.0);
      for (std::size_t k = 0; k < L; ++k) {
        for (std::size_t r = 0; r < L; ++r) {
          coeffs[k] += (points[i][r] - m.mean[r]) * m.axis(r, k);
        }
      }
      for (std::size_t r = 0; r < L; ++r) {
        double rec = m.mean[r];
        for (std::size_t k = 0; k < L; ++k) rec += coeffs[k] * m.axis(r, k);
        CHECK(rec == doctest::Approx(points[i][r]).epsilon(1e-4));
      }
    }
  }
}

TEST_CASE("perturb_axis") {
  Rng rng(44);
  std::vector<std::vector<float>> points;
  for (int i = 0; i < 50; ++i) points.push_back({rng.normal_f32(), rng.normal_f32()});
  PcaModel m = pca_fit(points);
  std::vector<float> mu{0.3f, -0.7f};

  SUBCASE("zero amount is the identity") {
    CHECK(perturb_axis(mu, m, 0, 0.0) == mu);
  }
  SUBCASE("displacement norm equals the amount") {
    std::vector<float> z = perturb_axis(mu, m, 1, -2.5);
    double d = 0;
    for (std::size_t r = 0; r < 2; ++r) d += (z[r] - mu[r]) * (z[r] - mu[r]);
    CHECK(std::sqrt(d) == doctest::Approx(2.5).epsilon(1e-6));
  }
  SUBCASE("forward then backward returns exactly") {
    std::vector<float> z = perturb_axis(perturb_axis(mu, m, 0, 1.25), m, 0, -1.25);
    CHECK(z[0] == doctest::Approx(mu[0]).epsilon(1e-6));
    CHECK(z[1] == doctest::Approx(mu[1]).epsilon(1e-6));
  }
  SUBCASE("axis index out of range") {
    CHECK_THROWS_AS(perturb_axis(mu, m, 7, 1.0), std::out_of_range);
  }
}

TEST_CASE("pca input validation") {
  CHECK_THROWS_AS(pca_fit({{1.0f, 2.0f}}), std::invalid_argument);  // N < 2
  std::vector<std::vector<float>> bad = {{1.0f, 2.0f}, {std::nanf(""), 0.0f}};
  CHECK_THROWS_AS(pca_fit(bad), std::invalid_argument);
  std::vector<std::vector<float>> ragged = {{1.0f, 2.0f}, {1.0f}};
  CHECK_THROWS_AS(pca_fit(ragged), std::invalid_argument);
}

TEST_CASE("pca JSON dump round trip") {
  testutil::TempDir tmp("pca");
  Rng rng(45);
  std::vector<std::vector<float>> points;
  for (int i = 0; i < 40; ++i) points.push_back({rng.normal_f32(), rng.normal_f32(), 0.1f * i});
  PcaModel m = pca_fit(points);
  write_pca(m, tmp.str("pca.json"));
  PcaModel back = read_pca(tmp.str("pca.json"));
  CHECK(back.mean == m.mean);
  CHECK(back.axes == m.axes);
  CHECK(back.eigenvalues == m.eigenvalues);
}
