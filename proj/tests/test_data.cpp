#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "lsf/data.hpp"
#include "lsf/errors.hpp"
#include "lsf/png_io.hpp"

namespace fs = std::filesystem;
using lsf::Camera;
using lsf::DataConfig;
using lsf::MiniScene;
using lsf::Ray;

namespace {

DataConfig small_cfg() {
  DataConfig cfg;
  cfg.width = 16;
  cfg.height = 16;
  cfg.views_per_scene = 3;
  return cfg;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("lsf-data-" + std::to_string(::getpid()) + "-" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string str() const { return path.string(); }
};

template <typename M>
bool exact(const M& a, const M& b) {
  return (a - b).cwiseAbs().maxCoeff() == 0.0;
}

bool scenes_equal(const MiniScene& a, const MiniScene& b) {
  if (a.boxes.size() != b.boxes.size()) return false;
  if (a.ground_height != b.ground_height) return false;
  if (!exact(a.ground_albedo, b.ground_albedo)) return false;
  if (!exact(a.sky_zenith, b.sky_zenith)) return false;
  if (!exact(a.sky_horizon, b.sky_horizon)) return false;
  if (!exact(a.sun_dir, b.sun_dir)) return false;
  for (size_t i = 0; i < a.boxes.size(); ++i) {
    if (!exact(a.boxes[i].center, b.boxes[i].center)) return false;
    if (!exact(a.boxes[i].size, b.boxes[i].size)) return false;
    if (!exact(a.boxes[i].face_albedo, b.boxes[i].face_albedo)) return false;
    if (a.boxes[i].checker != b.boxes[i].checker) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("scene generation is deterministic in the seed") {
  CHECK(scenes_equal(lsf::generate_scene(7), lsf::generate_scene(7)));
  CHECK_FALSE(scenes_equal(lsf::generate_scene(7), lsf::generate_scene(8)));
}

TEST_CASE("a thousand seeds respect the world invariants") {
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    MiniScene s = lsf::generate_scene(seed);
    REQUIRE(s.boxes.size() >= 3);
    REQUIRE(s.boxes.size() <= 8);
    CHECK(std::abs(s.sun_dir.norm() - 1.0) < 1e-12);
    CHECK(s.sun_dir.z() > 0.0);
    for (const auto& b : s.boxes) {
      CHECK(b.center.z() - 0.5 * b.size.z() >= s.ground_height - 1e-12);
      for (int a = 0; a < 2; ++a) {
        CHECK(b.center(a) - 0.5 * b.size(a) >= -lsf::kWorldBound);
        CHECK(b.center(a) + 0.5 * b.size(a) <= lsf::kWorldBound);
      }
      CHECK(b.face_albedo.minCoeff() >= 0.0);
      CHECK(b.face_albedo.maxCoeff() <= 1.0);
    }
  }
}

TEST_CASE("empty sky gives the gradient and the far sentinel") {
  MiniScene s = lsf::generate_scene(3);
  s.boxes.clear();
  auto cam = lsf::make_lookat({0, 0, 5}, {0, 20, 30}, 20.0, 8, 8, 0.5, 25.0);
  auto [img, depth] = lsf::raytrace_gt(s, cam);
  auto rays = lsf::all_pixel_rays(cam);
  for (int i = 0; i < depth.size(); ++i) {
    CHECK(depth(i) == 25.0);
    double up = std::clamp(rays[i].dir.z(), 0.0, 1.0);
    Eigen::Vector3d want =
        s.sky_horizon + up * (s.sky_zenith - s.sky_horizon);
    CHECK((img.row(i).transpose() - want).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("a head-on box face sits at its exact distance") {
  MiniScene s;
  s.boxes.clear();
  lsf::BoxSpec b;
  b.center = {7.0, 0.0, 0.0};
  b.size = {4.0, 4.0, 4.0};
  s.boxes.push_back(b);
  s.ground_height = -10.0;
  Ray ray;
  ray.origin = {0, 0, 0};
  ray.dir = {1, 0, 0};
  ray.t_near = 0.5;
  ray.t_far = 25.0;
  auto r = lsf::trace_ray(s, ray);
  REQUIRE(r.hit);
  CHECK(r.depth == 5.0);

  // The lit color is the -x face albedo scaled by ambient + lambert.
  s.sun_dir = Eigen::Vector3d(-1, 0, 1).normalized();
  b.face_albedo.row(0) << 0.6, 0.4, 0.2;
  s.boxes[0] = b;
  r = lsf::trace_ray(s, ray);
  double shade = 0.35 + 0.65 * (1.0 / std::sqrt(2.0));
  CHECK(r.color.x() == doctest::Approx(0.6 * shade).epsilon(1e-12));
  CHECK(r.color.y() == doctest::Approx(0.4 * shade).epsilon(1e-12));
}

TEST_CASE("pulling the camera back shifts every hit depth by the offset") {
  MiniScene s = lsf::generate_scene(11);
  // From above the tallest box the backed-up ray segment crosses only empty
  // air, so every hit depth must shift by exactly the translation.
  Eigen::Vector3d target = s.boxes[0].center;
  Camera cam = lsf::make_lookat(target + Eigen::Vector3d{3, 2, 12}, target,
                                20.0, 16, 16, 0.5, 40.0);
  int shifted = 0;
  for (const Ray& ray : lsf::all_pixel_rays(cam)) {
    auto a = lsf::trace_ray(s, ray);
    if (!a.hit || a.depth + 1.0 > ray.t_far - 1.0) continue;
    Ray back = ray;
    back.origin -= ray.dir;
    auto b = lsf::trace_ray(s, back);
    REQUIRE(b.hit);
    CHECK(b.depth == doctest::Approx(a.depth + 1.0).epsilon(1e-9));
    ++shifted;
  }
  CHECK(shifted > 100);
}

TEST_CASE("rendered views stay inside the contract ranges") {
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    MiniScene s = lsf::generate_scene(seed);
    auto cams = lsf::sample_views(s, seed, 2, small_cfg());
    for (const Camera& cam : cams) {
      auto [img, depth] = lsf::raytrace_gt(s, cam);
      CHECK(img.minCoeff() >= 0.0);
      CHECK(img.maxCoeff() <= 1.0);
      CHECK(depth.minCoeff() > cam.t_near);
      CHECK(depth.maxCoeff() <= cam.t_far);
    }
  }
}

TEST_CASE("view sampling orbits a point of interest deterministically") {
  auto cfg = small_cfg();

  MiniScene s21 = lsf::generate_scene(21);
  auto cams = lsf::sample_views(s21, 21, 12, cfg);
  REQUIRE(cams.size() == 12);

  auto again = lsf::sample_views(s21, 21, 12, cfg);
  for (int i = 0; i < 12; ++i) {
    CHECK(exact(cams[i].R, again[i].R));
    CHECK(exact(cams[i].t, again[i].t));
    CHECK(exact(cams[i].K, cams[0].K));
  }

  for (int i = 0; i < 12; ++i)
    for (int j = i + 1; j < 12; ++j)
      CHECK((cams[i].origin() - cams[j].origin()).norm() > 1e-9);

  for (uint64_t seed = 0; seed < 20; ++seed) {
    MiniScene s = lsf::generate_scene(seed);
    auto orbit = lsf::sample_views(s, seed, 8, cfg);
    // Certify a common point within 5m of every eye with the iterative
    // one-center approximation (move toward the farthest point).
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    for (const Camera& c : orbit) center += c.origin() / 8.0;
    for (int it = 1; it <= 2000; ++it) {
      Eigen::Vector3d far = center;
      double best = -1;
      for (const Camera& c : orbit) {
        double d = (c.origin() - center).norm();
        if (d > best) {
          best = d;
          far = c.origin();
        }
      }
      center += (far - center) / (it + 1);
    }
    double radius = 0;
    for (const Camera& c : orbit)
      radius = std::max(radius, (c.origin() - center).norm());
    CHECK(radius < 5.0);
  }

  CHECK_THROWS_AS(lsf::sample_views(s21, 1, 0, cfg), lsf::InputError);
}

TEST_CASE("png round trip preserves every byte") {
  TempDir tmp;
  int w = 9, h = 5;
  Eigen::MatrixXd img(w * h, 3);
  lsf::Rng rng(lsf::RngKey{}.fold(31));
  for (int i = 0; i < img.rows(); ++i)
    for (int c = 0; c < 3; ++c) img(i, c) = rng.uniform();
  std::string p = tmp.str() + "/x.png";
  lsf::write_png(p, img, w, h);

  int w2 = 0, h2 = 0;
  Eigen::MatrixXd back = lsf::read_png(p, w2, h2);
  CHECK(w2 == w);
  CHECK(h2 == h);
  CHECK(lsf::quantize_rgb8(back) == lsf::quantize_rgb8(img));

  lsf::write_png(tmp.str() + "/y.png", back, w, h);
  int w3 = 0, h3 = 0;
  Eigen::MatrixXd twice = lsf::read_png(tmp.str() + "/y.png", w3, h3);
  CHECK(exact(back, twice));

  CHECK_THROWS_AS(lsf::read_png(tmp.str() + "/missing.png", w2, h2),
                  lsf::DataError);
  std::ofstream bad(tmp.str() + "/bad.png", std::ios::binary);
  bad << "not a png";
  bad.close();
  CHECK_THROWS_AS(lsf::read_png(tmp.str() + "/bad.png", w2, h2),
                  lsf::DataError);
}

TEST_CASE("depth files round trip through float32") {
  TempDir tmp;
  int w = 6, h = 4;
  Eigen::VectorXd d(w * h);
  lsf::Rng rng(lsf::RngKey{}.fold(41));
  for (int i = 0; i < d.size(); ++i) d(i) = rng.uniform(0.5, 25.0);
  std::string p = tmp.str() + "/x.depth";
  lsf::write_depth_raw(p, d, w, h);

  int w2 = 0, h2 = 0;
  Eigen::VectorXd back = lsf::read_depth_raw(p, w2, h2);
  CHECK(w2 == w);
  CHECK(h2 == h);
  for (int i = 0; i < d.size(); ++i)
    CHECK(back(i) == static_cast<double>(static_cast<float>(d(i))));

  // Header is explicitly little-endian.
  std::ifstream f(p, std::ios::binary);
  unsigned char head[8];
  f.read(reinterpret_cast<char*>(head), 8);
  CHECK(head[0] == 6);
  CHECK(head[1] == 0);
  CHECK(head[4] == 4);

  std::ofstream trunc(tmp.str() + "/t.depth", std::ios::binary);
  std::ifstream src(p, std::ios::binary);
  std::vector<char> bytes(20);
  src.read(bytes.data(), 20);
  trunc.write(bytes.data(), 20);
  trunc.close();
  CHECK_THROWS_AS(lsf::read_depth_raw(tmp.str() + "/t.depth", w2, h2),
                  lsf::DataError);
}

TEST_CASE("dataset round trip and corruption errors") {
  TempDir tmp;
  auto cfg = small_cfg();
  auto ds = lsf::build_dataset(5, 2, cfg);
  REQUIRE(ds.scenes.size() == 2);
  REQUIRE(ds.scenes[0].views.size() == 3);
  lsf::write_dataset(tmp.str(), ds);

  auto back = lsf::read_dataset(tmp.str());
  CHECK(back.width == cfg.width);
  CHECK(back.t_far == cfg.t_far);
  REQUIRE(back.scenes.size() == 2);
  for (size_t s = 0; s < 2; ++s) {
    CHECK(back.scenes[s].id == ds.scenes[s].id);
    CHECK(back.scenes[s].seed == ds.scenes[s].seed);
    for (size_t v = 0; v < 3; ++v) {
      const auto& a = ds.scenes[s].views[v];
      const auto& b = back.scenes[s].views[v];
      CHECK(lsf::quantize_rgb8(b.image) == lsf::quantize_rgb8(a.image));
      for (int i = 0; i < a.depth.size(); ++i)
        CHECK(b.depth(i) ==
              static_cast<double>(static_cast<float>(a.depth(i))));
      CHECK((b.cam.K - a.cam.K).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((b.cam.R - a.cam.R).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((b.cam.t - a.cam.t).cwiseAbs().maxCoeff() < 1e-12);
    }
  }

  SUBCASE("second read is bitwise stable") {
    auto twice = lsf::read_dataset(tmp.str());
    CHECK(exact(twice.scenes[1].views[2].image, back.scenes[1].views[2].image));
    CHECK(exact(twice.scenes[1].views[2].depth, back.scenes[1].views[2].depth));
  }

  SUBCASE("version mismatch is rejected") {
    std::ifstream in(tmp.str() + "/manifest.json");
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    in.close();
    auto pos = text.find("\"version\": 1");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 12, "\"version\": 9");
    std::ofstream out(tmp.str() + "/manifest.json");
    out << text;
    out.close();
    CHECK_THROWS_WITH_AS(lsf::read_dataset(tmp.str()),
                         doctest::Contains("version"), lsf::DataError);
  }

  SUBCASE("missing camera json names the view") {
    fs::remove(tmp.path / "scene_0001" / "view_001.json");
    CHECK_THROWS_WITH_AS(lsf::read_dataset(tmp.str()),
                         doctest::Contains("view_001"), lsf::DataError);
  }

  SUBCASE("truncated depth file is a data error") {
    auto p = tmp.path / "scene_0000" / "view_000.depth";
    fs::resize_file(p, fs::file_size(p) / 2);
    CHECK_THROWS_WITH_AS(lsf::read_dataset(tmp.str()),
                         doctest::Contains("truncated"), lsf::DataError);
  }
}

TEST_CASE("re-rendering a loaded view reproduces the stored image bitwise") {
  TempDir tmp;
  auto cfg = small_cfg();
  lsf::write_dataset(tmp.str(), lsf::build_dataset(9, 1, cfg));
  auto ds = lsf::read_dataset(tmp.str());

  const auto& rec = ds.scenes[0];
  MiniScene scene = lsf::generate_scene(rec.seed);
  for (const auto& v : rec.views) {
    auto [img, depth] = lsf::raytrace_gt(scene, v.cam);
    CHECK(lsf::quantize_rgb8(img) == lsf::quantize_rgb8(v.image));
    for (int i = 0; i < depth.size(); ++i)
      CHECK(static_cast<float>(depth(i)) == static_cast<float>(v.depth(i)));
  }
}
