#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lsf/errors.hpp"
#include "lsf/geometry.hpp"
#include "lsf/rng.hpp"

using lsf::Camera;
using lsf::Ray;
using lsf::Rng;
using lsf::RngKey;

namespace {

Camera basic_camera(double focal = 100, double cx = 16, double cy = 16,
                    int w = 32, int h = 32) {
  Camera c;
  c.K << focal, 0, cx, 0, focal, cy, 0, 0, 1;
  c.width = w;
  c.height = h;
  c.t_near = 0.1;
  c.t_far = 10.0;
  return c;
}

Camera random_camera(uint64_t seed) {
  Rng rng(RngKey{}.fold(seed));
  Eigen::Vector3d eye(rng.uniform(-3, 3), rng.uniform(-3, 3),
                      rng.uniform(0.5, 3));
  Eigen::Vector3d target(rng.uniform(-1, 1), rng.uniform(-1, 1),
                         rng.uniform(-0.5, 0.5));
  return lsf::make_lookat(eye, target, rng.uniform(30, 120), 48, 40, 0.1, 20.0);
}

}  // namespace

TEST_CASE("pixel_to_ray identity camera through principal point") {
  Camera c = basic_camera();
  Ray r = lsf::pixel_to_ray(c, 16, 16);
  CHECK(r.dir.isApprox(Eigen::Vector3d(0, 0, 1), 1e-12));
  CHECK(r.origin.norm() == doctest::Approx(0.0));
  CHECK(r.t_near == doctest::Approx(c.t_near));
  CHECK(r.t_far == doctest::Approx(c.t_far));
}

TEST_CASE("pixel_to_ray 45 degree offset") {
  // focal 100, principal (16,16): pixel 100px right of center, direction
  // proportional to (1,0,1)/sqrt(2). That pixel is outside a 32px image, so
  // widen the camera.
  Camera c = basic_camera(100, 16, 16, 256, 32);
  Ray r = lsf::pixel_to_ray(c, 16 + 100, 16);
  Eigen::Vector3d want = Eigen::Vector3d(1, 0, 1).normalized();
  CHECK(r.dir.isApprox(want, 1e-12));
}

TEST_CASE("pixel_to_ray rejects out-of-bounds pixels") {
  Camera c = basic_camera();
  CHECK_THROWS_AS(lsf::pixel_to_ray(c, -1, 5), lsf::InputError);
  CHECK_THROWS_AS(lsf::pixel_to_ray(c, 5, 32), lsf::InputError);
}

TEST_CASE("project_point identity pose examples") {
  Camera c = basic_camera();
  auto pr = lsf::project_point(c, Eigen::Vector3d(0, 0, 1));
  CHECK_FALSE(pr.behind);
  CHECK(pr.u == doctest::Approx(16.0));
  CHECK(pr.v == doctest::Approx(16.0));
  CHECK(pr.depth == doctest::Approx(1.0));

  Camera c0 = basic_camera(100, 0, 0);
  auto pr2 = lsf::project_point(c0, Eigen::Vector3d(0.5, 0, 2));
  CHECK(pr2.u == doctest::Approx(25.0));
  CHECK(pr2.v == doctest::Approx(0.0));
  CHECK(pr2.depth == doctest::Approx(2.0));
}

TEST_CASE("project_point flags the camera center as behind") {
  Camera c = random_camera(3);
  auto pr = lsf::project_point(c, c.origin());
  CHECK(pr.behind);
}

TEST_CASE("is_visible") {
  Camera c = basic_camera();
  CHECK(lsf::is_visible(c, Eigen::Vector3d(0, 0, 1)));
  CHECK_FALSE(lsf::is_visible(c, Eigen::Vector3d(0, 0, -1)));
  // A point projecting right of the image border.
  double u = c.width + 1;
  Eigen::Vector3d p((u - 16) / 100.0 * 2.0, 0, 2.0);
  auto pr = lsf::project_point(c, p);
  CHECK(pr.u == doctest::Approx(u));
  CHECK_FALSE(lsf::is_visible(c, p));
}

TEST_CASE("projection round trip over random cameras") {
  for (uint64_t s = 0; s < 20; ++s) {
    Camera c = random_camera(s);
    Rng rng(RngKey{}.fold(s).fold("pix"));
    for (int k = 0; k < 10; ++k) {
      double u = rng.uniform(0, c.width);
      double v = rng.uniform(0, c.height);
      Ray r = lsf::pixel_to_ray(c, u, v);
      double tval = rng.uniform(c.t_near, c.t_far);
      auto pr = lsf::project_point(c, r.at(tval));
      REQUIRE_FALSE(pr.behind);
      CHECK(std::abs(pr.u - u) < 1e-4);
      CHECK(std::abs(pr.v - v) < 1e-4);
    }
  }
}

TEST_CASE("points scaled along a visible ray stay visible while in front") {
  Camera c = random_camera(77);
  Ray r = lsf::pixel_to_ray(c, 10.5, 20.5);
  for (double tval : {0.3, 1.0, 4.0, 15.0})
    CHECK(lsf::is_visible(c, r.at(tval)));
}

TEST_CASE("circular_encode exact values") {
  auto z = lsf::circular_encode(0.0, -2, 3);
  for (size_t i = 0; i < z.size(); i += 2) {
    CHECK(z[i] == doctest::Approx(0.0));
    CHECK(z[i + 1] == doctest::Approx(1.0));
  }
  auto e = lsf::circular_encode(0.5, 0, 1);
  REQUIRE(e.size() == 4);
  CHECK(e[0] == doctest::Approx(1.0));
  CHECK(e[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(e[2] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(e[3] == doctest::Approx(-1.0));
}

TEST_CASE("circular_encode output dims for published ranges") {
  CHECK(lsf::circular_encode(0.1, -8, 8).size() == 34);
  CHECK(lsf::circular_encode(0.1, 0, 4).size() == 10);
}

TEST_CASE("circular_encode periodicity and pythagorean identity") {
  Rng rng(RngKey{}.fold(5));
  for (int trial = 0; trial < 50; ++trial) {
    double p = rng.uniform(-4, 4);
    int lmin = -2, lmax = 4;
    auto a = lsf::circular_encode(p, lmin, lmax);
    for (int l = lmin; l <= lmax; ++l) {
      size_t i = 2 * static_cast<size_t>(l - lmin);
      CHECK(a[i] * a[i] + a[i + 1] * a[i + 1] == doctest::Approx(1.0).epsilon(1e-6));
      double period = 2.0 / std::pow(2.0, l);
      auto b = lsf::circular_encode(p + period, lmin, lmax);
      CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-6));
      CHECK(b[i + 1] == doctest::Approx(a[i + 1]).epsilon(1e-6));
    }
  }
}
