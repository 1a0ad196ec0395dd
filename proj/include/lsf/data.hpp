#pragma once

// Procedural box-city scenes with an analytic raytracer for ground truth,
// plus the on-disk posed RGB-D dataset format.
//
// World convention: z up, ground plane at z = ground_height, boxes sit on the
// ground inside the [-20,20]^2 footprint. Depth maps store the ray-hit
// distance; misses store t_far, which doubles as the "no surface" sentinel.
//
// Directory layout:
//   root/manifest.json            version, scene count, image size, near/far
//   root/<scene>/manifest.json    scene id, generator seed, view list
//   root/<scene>/<view>.png       8-bit RGB
//   root/<scene>/<view>.depth     u32 width, u32 height, float32 row-major,
//                                 all little-endian
//   root/<scene>/<view>.json      K, R, t row-major plus near/far

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "lsf/geometry.hpp"
#include "lsf/rng.hpp"

namespace lsf {

constexpr double kWorldBound = 20.0;
constexpr int kDatasetVersion = 1;

struct BoxSpec {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d size = Eigen::Vector3d::Ones();  // full extents
  // Rows are faces -x,+x,-y,+y,-z,+z.
  Eigen::Matrix<double, 6, 3> face_albedo =
      Eigen::Matrix<double, 6, 3>::Constant(0.5);
  double checker = 0.0;  // checker period in meters; 0 = solid faces
};

struct MiniScene {
  double ground_height = 0.0;
  Eigen::Vector3d ground_albedo = {0.4, 0.4, 0.4};
  std::vector<BoxSpec> boxes;
  Eigen::Vector3d sky_zenith = {0.2, 0.4, 0.7};
  Eigen::Vector3d sky_horizon = {0.8, 0.85, 0.9};
  Eigen::Vector3d sun_dir = {0.0, 0.0, 1.0};  // unit, toward the sun
};

struct DataConfig {
  int width = 32;
  int height = 32;
  double focal_factor = 1.2;  // focal length in units of image width
  double t_near = 0.5;
  double t_far = 25.0;
  int views_per_scene = 12;
};

struct TraceResult {
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  double depth = 0.0;
  bool hit = false;
};

struct ViewRecord {
  Eigen::MatrixXd image;  // (height*width) x 3 in [0,1], row-major pixels
  Eigen::VectorXd depth;  // height*width
  Camera cam;
};

struct SceneRecord {
  std::string id;
  uint64_t seed = 0;
  std::vector<ViewRecord> views;
};

struct SceneDataset {
  int width = 0;
  int height = 0;
  double t_near = 0.0;
  double t_far = 0.0;
  std::vector<SceneRecord> scenes;
};

// Deterministic scene from a seed: 3-8 boxes with randomized footprints,
// heights, per-face albedos and checker scales, plus a random sun direction
// and sky gradient.
MiniScene generate_scene(uint64_t seed);

// Nearest box-face or ground hit within [t_near, t_far], Lambertian shaded
// by sun + ambient; misses return the directional sky color and depth t_far.
TraceResult trace_ray(const MiniScene& scene, const Ray& ray);

// Full-image ground truth for one camera: image rows follow pixel order
// iy * width + ix.
std::pair<Eigen::MatrixXd, Eigen::VectorXd> raytrace_gt(const MiniScene& scene,
                                                        const Camera& cam);

// Cameras orbiting a randomly chosen point of interest (within 5 m of it),
// with jittered look-at targets and shared intrinsics.
std::vector<Camera> sample_views(const MiniScene& scene, uint64_t seed,
                                 int n_views, const DataConfig& cfg);

// Generates, poses, and raytraces one scene.
SceneRecord make_scene_record(uint64_t seed, const DataConfig& cfg,
                              std::string id);

// n_scenes records with per-scene seeds derived from base_seed.
SceneDataset build_dataset(uint64_t base_seed, int n_scenes,
                           const DataConfig& cfg);

void write_depth_raw(const std::string& path, const Eigen::VectorXd& depth,
                     int width, int height);
Eigen::VectorXd read_depth_raw(const std::string& path, int& width,
                               int& height);

void write_dataset(const std::string& path, const SceneDataset& ds);

// Loads a dataset directory; version mismatches, missing or truncated files,
// and shape mismatches raise DataError naming the offending file.
SceneDataset read_dataset(const std::string& path);

}  // namespace lsf
