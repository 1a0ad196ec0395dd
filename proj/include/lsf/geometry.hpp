#pragma once

// Pinhole camera model and ray generation. World-to-camera convention:
// x_cam = R * x_world + t, camera looks down +z. Pixel (ix, iy) has its
// center at continuous coordinates (ix + 0.5, iy + 0.5).

#include <Eigen/Dense>

#include <vector>

namespace lsf {

struct Camera {
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  int width = 0;
  int height = 0;
  double t_near = 0.1;
  double t_far = 10.0;

  Eigen::Vector3d origin() const { return -R.transpose() * t; }
};

struct Ray {
  Eigen::Vector3d origin;
  Eigen::Vector3d dir;  // unit length
  double t_near = 0;
  double t_far = 0;

  Eigen::Vector3d at(double t) const { return origin + t * dir; }
};

struct Projection {
  double u = 0;
  double v = 0;
  double depth = 0;     // z in camera frame
  bool behind = false;  // depth at or below the near-zero threshold
};

// Ray through continuous pixel coordinates (u, v). Coordinates outside
// [0,width)x[0,height) raise InputError.
Ray pixel_to_ray(const Camera& cam, double u, double v);

// Rays through all pixel centers, row-major (index = iy * width + ix).
std::vector<Ray> all_pixel_rays(const Camera& cam);

Projection project_point(const Camera& cam, const Eigen::Vector3d& p);

// True iff p is in front of the camera and projects inside the image.
bool is_visible(const Camera& cam, const Eigen::Vector3d& p);

// Camera at `eye` looking at `target` (world +z up unless the view direction
// is near-vertical, then +x breaks the tie).
Camera make_lookat(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                   double focal_px, int width, int height, double t_near,
                   double t_far);

// Scalar sin/cos frequency encoding: (sin(2^L pi p), cos(2^L pi p)) pairs for
// L = l_min..l_max. The batched differentiable version lives in ad.hpp with
// the same layout.
std::vector<double> circular_encode(double p, int l_min, int l_max);

}  // namespace lsf
