#include "lsf/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>

#include "lsf/errors.hpp"
#include "lsf/png_io.hpp"
#include "lsf/wire.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using lsf::wire::get_u32;
using lsf::wire::put_u32;

namespace lsf {

namespace {

constexpr double kAmbient = 0.35;
constexpr double kCheckerDarken = 0.55;

std::string index_id(const char* stem, int digits, size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%0*zu", stem, digits, i);
  return buf;
}

json load_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open: " + path);
  try {
    json j;
    f >> j;
    return j;
  } catch (const json::exception& e) {
    throw DataError("bad json in " + path + ": " + e.what());
  }
}

void store_json(const std::string& path, const json& j) {
  std::ofstream f(path);
  f << j.dump(2) << "\n";
  if (!f) throw DataError("cannot write: " + path);
}

json camera_to_json(const Camera& c) {
  json j;
  auto flat9 = [](const Eigen::Matrix3d& m) {
    std::vector<double> v(9);
    for (int r = 0; r < 3; ++r)
      for (int col = 0; col < 3; ++col) v[r * 3 + col] = m(r, col);
    return v;
  };
  j["K"] = flat9(c.K);
  j["R"] = flat9(c.R);
  j["t"] = std::vector<double>{c.t.x(), c.t.y(), c.t.z()};
  j["width"] = c.width;
  j["height"] = c.height;
  j["t_near"] = c.t_near;
  j["t_far"] = c.t_far;
  return j;
}

Camera camera_from_json(const json& j, const std::string& path) {
  for (const char* key : {"K", "R", "t", "width", "height", "t_near", "t_far"})
    if (!j.contains(key))
      throw DataError("camera json missing \"" + std::string(key) +
                      "\": " + path);
  auto mat9 = [&](const char* key) {
    auto v = j.at(key).get<std::vector<double>>();
    if (v.size() != 9)
      throw DataError("camera \"" + std::string(key) +
                      "\" must have 9 entries: " + path);
    Eigen::Matrix3d m;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) m(r, c) = v[r * 3 + c];
    return m;
  };
  Camera c;
  c.K = mat9("K");
  c.R = mat9("R");
  auto tv = j.at("t").get<std::vector<double>>();
  if (tv.size() != 3)
    throw DataError("camera \"t\" must have 3 entries: " + path);
  c.t = {tv[0], tv[1], tv[2]};
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  c.t_near = j.at("t_near").get<double>();
  c.t_far = j.at("t_far").get<double>();
  return c;
}

}  // namespace

MiniScene generate_scene(uint64_t seed) {
  Rng rng(RngKey{}.fold("scene").fold(seed));
  MiniScene s;
  s.ground_height = 0.0;
  for (int c = 0; c < 3; ++c) s.ground_albedo(c) = rng.uniform(0.3, 0.5);
  s.sky_zenith = {rng.uniform(0.05, 0.25), rng.uniform(0.25, 0.5),
                  rng.uniform(0.55, 0.9)};
  s.sky_horizon = {rng.uniform(0.7, 0.95), rng.uniform(0.7, 0.95),
                   rng.uniform(0.75, 0.95)};
  double az = rng.uniform(0.0, 2.0 * std::numbers::pi);
  double el = rng.uniform(0.35, 1.2);
  s.sun_dir = {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az),
               std::sin(el)};

  int n = 3 + static_cast<int>(rng.uniform_index(6));
  for (int i = 0; i < n; ++i) {
    BoxSpec b;
    b.size = {rng.uniform(0.8, 5.0), rng.uniform(0.8, 5.0),
              rng.uniform(1.0, 7.0)};
    b.center = {rng.uniform(-12.0, 12.0), rng.uniform(-12.0, 12.0),
                s.ground_height + 0.5 * b.size.z()};
    Eigen::Vector3d base = {rng.uniform(0.2, 0.9), rng.uniform(0.2, 0.9),
                            rng.uniform(0.2, 0.9)};
    for (int f = 0; f < 6; ++f) {
      double jitter = rng.uniform(0.75, 1.0);
      for (int c = 0; c < 3; ++c)
        b.face_albedo(f, c) = std::clamp(base(c) * jitter, 0.05, 0.95);
    }
    double period = rng.uniform(0.4, 2.0);
    b.checker = rng.uniform() < 0.5 ? period : 0.0;
    s.boxes.push_back(b);
  }
  return s;
}

TraceResult trace_ray(const MiniScene& scene, const Ray& ray) {
  const Eigen::Vector3d& o = ray.origin;
  const Eigen::Vector3d& d = ray.dir;
  constexpr double kInf = std::numeric_limits<double>::infinity();

  double best_t = ray.t_far;
  bool hit = false;
  Eigen::Vector3d albedo = Eigen::Vector3d::Zero();
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
  double checker = 0.0;
  int hit_axis = 2;

  for (const BoxSpec& b : scene.boxes) {
    Eigen::Vector3d lo = b.center - 0.5 * b.size;
    Eigen::Vector3d hi = b.center + 0.5 * b.size;
    double t0 = -kInf, t1 = kInf;
    int face = -1;
    bool miss = false;
    for (int a = 0; a < 3 && !miss; ++a) {
      if (std::abs(d(a)) < 1e-12) {
        if (o(a) < lo(a) || o(a) > hi(a)) miss = true;
        continue;
      }
      double ta = (lo(a) - o(a)) / d(a);
      double tb = (hi(a) - o(a)) / d(a);
      // A ray moving toward +a enters through the low face, normal -e_a.
      int f = d(a) > 0 ? 2 * a : 2 * a + 1;
      if (ta > tb) std::swap(ta, tb);
      if (ta > t0) {
        t0 = ta;
        face = f;
      }
      t1 = std::min(t1, tb);
    }
    if (miss || t0 > t1 || t0 < ray.t_near || t0 >= best_t) continue;
    best_t = t0;
    hit = true;
    hit_axis = face / 2;
    normal = Eigen::Vector3d::Zero();
    normal(hit_axis) = face % 2 == 0 ? -1.0 : 1.0;
    albedo = b.face_albedo.row(face).transpose();
    checker = b.checker;
  }

  if (std::abs(d.z()) > 1e-12) {
    double tg = (scene.ground_height - o.z()) / d.z();
    if (tg >= ray.t_near && tg < best_t) {
      best_t = tg;
      hit = true;
      hit_axis = 2;
      normal = Eigen::Vector3d::UnitZ();
      albedo = scene.ground_albedo;
      checker = 0.0;
    }
  }

  TraceResult r;
  if (!hit) {
    double up = std::clamp(d.z(), 0.0, 1.0);
    r.color = scene.sky_horizon + up * (scene.sky_zenith - scene.sky_horizon);
    r.depth = ray.t_far;
    return r;
  }
  if (checker > 0.0) {
    Eigen::Vector3d p = ray.at(best_t);
    int ua = (hit_axis + 1) % 3, va = (hit_axis + 2) % 3;
    long pu = static_cast<long>(std::floor(p(ua) / checker));
    long pv = static_cast<long>(std::floor(p(va) / checker));
    if (((pu + pv) & 1) == 0) albedo *= kCheckerDarken;
  }
  double lambert = std::max(0.0, normal.dot(scene.sun_dir));
  double shade = kAmbient + (1.0 - kAmbient) * lambert;
  r.color = (albedo * shade).cwiseMax(0.0).cwiseMin(1.0);
  r.depth = best_t;
  r.hit = true;
  return r;
}

std::pair<Eigen::MatrixXd, Eigen::VectorXd> raytrace_gt(const MiniScene& scene,
                                                        const Camera& cam) {
  auto rays = all_pixel_rays(cam);
  Eigen::MatrixXd img(static_cast<Eigen::Index>(rays.size()), 3);
  Eigen::VectorXd depth(static_cast<Eigen::Index>(rays.size()));
  for (size_t i = 0; i < rays.size(); ++i) {
    TraceResult r = trace_ray(scene, rays[i]);
    img.row(static_cast<Eigen::Index>(i)) = r.color.transpose();
    depth(static_cast<Eigen::Index>(i)) = r.depth;
  }
  return {std::move(img), std::move(depth)};
}

std::vector<Camera> sample_views(const MiniScene& scene, uint64_t seed,
                                 int n_views, const DataConfig& cfg) {
  if (n_views < 1) throw InputError("sample_views needs n_views >= 1");
  if (scene.boxes.empty()) throw InputError("scene has no boxes");
  Rng rng(RngKey{}.fold("views").fold(seed));

  const BoxSpec& b = scene.boxes[rng.uniform_index(scene.boxes.size())];
  Eigen::Vector3d poi = b.center;
  poi.z() = scene.ground_height + b.size.z() * rng.uniform(0.4, 0.9);

  std::vector<Camera> cams;
  for (int i = 0; i < n_views; ++i) {
    double radius = rng.uniform(2.5, 4.5);
    double az = rng.uniform(0.0, 2.0 * std::numbers::pi);
    double el = rng.uniform(0.26, 0.87);  // 15..50 degrees above horizontal
    Eigen::Vector3d offset = {std::cos(el) * std::cos(az),
                              std::cos(el) * std::sin(az), std::sin(el)};
    Eigen::Vector3d target = poi + Eigen::Vector3d{rng.uniform(-0.5, 0.5),
                                                   rng.uniform(-0.5, 0.5),
                                                   rng.uniform(-0.5, 0.5)};
    cams.push_back(make_lookat(poi + radius * offset, target,
                               cfg.focal_factor * cfg.width, cfg.width,
                               cfg.height, cfg.t_near, cfg.t_far));
  }
  return cams;
}

SceneRecord make_scene_record(uint64_t seed, const DataConfig& cfg,
                              std::string id) {
  SceneRecord rec;
  rec.id = std::move(id);
  rec.seed = seed;
  MiniScene scene = generate_scene(seed);
  for (const Camera& cam : sample_views(scene, seed, cfg.views_per_scene, cfg)) {
    ViewRecord v;
    v.cam = cam;
    std::tie(v.image, v.depth) = raytrace_gt(scene, cam);
    rec.views.push_back(std::move(v));
  }
  return rec;
}

SceneDataset build_dataset(uint64_t base_seed, int n_scenes,
                           const DataConfig& cfg) {
  if (n_scenes < 1) throw InputError("build_dataset needs n_scenes >= 1");
  SceneDataset ds;
  ds.width = cfg.width;
  ds.height = cfg.height;
  ds.t_near = cfg.t_near;
  ds.t_far = cfg.t_far;
  for (int i = 0; i < n_scenes; ++i) {
    uint64_t seed = RngKey{}.fold(base_seed).fold(static_cast<uint64_t>(i)).state;
    ds.scenes.push_back(
        make_scene_record(seed, cfg, index_id("scene", 4, i)));
  }
  return ds;
}

void write_depth_raw(const std::string& path, const Eigen::VectorXd& depth,
                     int width, int height) {
  if (depth.size() != static_cast<Eigen::Index>(width) * height)
    throw InputError("depth size must equal width*height");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for writing: " + path);
  put_u32(f, static_cast<uint32_t>(width));
  put_u32(f, static_cast<uint32_t>(height));
  for (Eigen::Index i = 0; i < depth.size(); ++i)
    put_u32(f, std::bit_cast<uint32_t>(static_cast<float>(depth(i))));
  if (!f) throw DataError("cannot write: " + path);
}

Eigen::VectorXd read_depth_raw(const std::string& path, int& width,
                               int& height) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open: " + path);
  uint32_t w = 0, h = 0;
  if (!get_u32(f, w) || !get_u32(f, h))
    throw DataError("truncated depth header: " + path);
  if (w == 0 || h == 0 || w > 1u << 14 || h > 1u << 14)
    throw DataError("implausible depth dimensions: " + path);
  width = static_cast<int>(w);
  height = static_cast<int>(h);
  Eigen::VectorXd depth(static_cast<Eigen::Index>(w) * h);
  for (Eigen::Index i = 0; i < depth.size(); ++i) {
    uint32_t bits = 0;
    if (!get_u32(f, bits)) throw DataError("truncated depth data: " + path);
    depth(i) = static_cast<double>(std::bit_cast<float>(bits));
  }
  return depth;
}

void write_dataset(const std::string& path, const SceneDataset& ds) {
  fs::create_directories(path);
  json root;
  root["version"] = kDatasetVersion;
  root["scene_count"] = ds.scenes.size();
  root["width"] = ds.width;
  root["height"] = ds.height;
  root["t_near"] = ds.t_near;
  root["t_far"] = ds.t_far;
  std::vector<std::string> ids;
  for (const SceneRecord& s : ds.scenes) ids.push_back(s.id);
  root["scenes"] = ids;
  store_json(path + "/manifest.json", root);

  Eigen::Index pixels = static_cast<Eigen::Index>(ds.width) * ds.height;
  for (const SceneRecord& s : ds.scenes) {
    std::string dir = path + "/" + s.id;
    fs::create_directories(dir);
    json man;
    man["scene"] = s.id;
    man["seed"] = s.seed;
    std::vector<std::string> view_ids;
    for (size_t j = 0; j < s.views.size(); ++j)
      view_ids.push_back(index_id("view", 3, j));
    man["views"] = view_ids;
    store_json(dir + "/manifest.json", man);

    for (size_t j = 0; j < s.views.size(); ++j) {
      const ViewRecord& v = s.views[j];
      if (v.image.rows() != pixels || v.depth.size() != pixels)
        throw InputError("view " + view_ids[j] + " of " + s.id +
                         " does not match the dataset image size");
      std::string stem = dir + "/" + view_ids[j];
      write_png(stem + ".png", v.image, ds.width, ds.height);
      write_depth_raw(stem + ".depth", v.depth, ds.width, ds.height);
      store_json(stem + ".json", camera_to_json(v.cam));
    }
  }
}

SceneDataset read_dataset(const std::string& path) {
  std::string root_path = path + "/manifest.json";
  json root = load_json(root_path);
  for (const char* key :
       {"version", "scene_count", "width", "height", "t_near", "t_far",
        "scenes"})
    if (!root.contains(key))
      throw DataError("manifest missing \"" + std::string(key) +
                      "\": " + root_path);
  if (root.at("version").get<int>() != kDatasetVersion)
    throw DataError("unsupported dataset version " +
                    root.at("version").dump() + " in " + root_path);

  SceneDataset ds;
  ds.width = root.at("width").get<int>();
  ds.height = root.at("height").get<int>();
  ds.t_near = root.at("t_near").get<double>();
  ds.t_far = root.at("t_far").get<double>();

  auto ids = root.at("scenes").get<std::vector<std::string>>();
  if (ids.size() != root.at("scene_count").get<size_t>())
    throw DataError("scene list does not match scene_count: " + root_path);

  for (const std::string& id : ids) {
    std::string dir = path + "/" + id;
    std::string man_path = dir + "/manifest.json";
    json man = load_json(man_path);
    SceneRecord rec;
    rec.id = id;
    if (!man.contains("seed") || !man.contains("views"))
      throw DataError("scene manifest missing fields: " + man_path);
    rec.seed = man.at("seed").get<uint64_t>();

    for (const std::string& vid :
         man.at("views").get<std::vector<std::string>>()) {
      std::string stem = dir + "/" + vid;
      ViewRecord v;
      int w = 0, h = 0;
      v.image = read_png(stem + ".png", w, h);
      if (w != ds.width || h != ds.height)
        throw DataError("image size mismatch: " + stem + ".png");
      v.depth = read_depth_raw(stem + ".depth", w, h);
      if (w != ds.width || h != ds.height)
        throw DataError("depth size mismatch: " + stem + ".depth");
      v.cam = camera_from_json(load_json(stem + ".json"), stem + ".json");
      if (v.cam.width != ds.width || v.cam.height != ds.height)
        throw DataError("camera size mismatch: " + stem + ".json");
      rec.views.push_back(std::move(v));
    }
    ds.scenes.push_back(std::move(rec));
  }
  return ds;
}

}  // namespace lsf
