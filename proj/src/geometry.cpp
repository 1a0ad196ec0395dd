#include "lsf/geometry.hpp"

#include <cmath>

#include "lsf/errors.hpp"

namespace lsf {

namespace {
constexpr double kDepthEps = 1e-8;
constexpr double kPi = 3.14159265358979323846;
}

Ray pixel_to_ray(const Camera& cam, double u, double v) {
  if (u < 0 || u >= cam.width || v < 0 || v >= cam.height)
    throw InputError("pixel_to_ray: pixel outside image bounds");
  Eigen::Vector3d pix(u, v, 1.0);
  Eigen::Vector3d d_cam = cam.K.inverse() * pix;
  Eigen::Vector3d d_world = cam.R.transpose() * d_cam;
  Ray r;
  r.origin = cam.origin();
  r.dir = d_world.normalized();
  r.t_near = cam.t_near;
  r.t_far = cam.t_far;
  return r;
}

std::vector<Ray> all_pixel_rays(const Camera& cam) {
  std::vector<Ray> rays;
  rays.reserve(static_cast<size_t>(cam.width) * cam.height);
  Eigen::Matrix3d Kinv = cam.K.inverse();
  Eigen::Matrix3d Rt = cam.R.transpose();
  Eigen::Vector3d o = cam.origin();
  for (int iy = 0; iy < cam.height; ++iy) {
    for (int ix = 0; ix < cam.width; ++ix) {
      Eigen::Vector3d d = Rt * (Kinv * Eigen::Vector3d(ix + 0.5, iy + 0.5, 1.0));
      rays.push_back(Ray{o, d.normalized(), cam.t_near, cam.t_far});
    }
  }
  return rays;
}

Projection project_point(const Camera& cam, const Eigen::Vector3d& p) {
  Eigen::Vector3d x = cam.R * p + cam.t;
  Projection pr;
  pr.depth = x.z();
  if (x.z() <= kDepthEps) {
    pr.behind = true;
    pr.u = 0;
    pr.v = 0;
    return pr;
  }
  Eigen::Vector3d h = cam.K * x;
  pr.u = h.x() / h.z();
  pr.v = h.y() / h.z();
  return pr;
}

bool is_visible(const Camera& cam, const Eigen::Vector3d& p) {
  Projection pr = project_point(cam, p);
  if (pr.behind || pr.depth <= 0) return false;
  return pr.u >= 0 && pr.u < cam.width && pr.v >= 0 && pr.v < cam.height;
}

Camera make_lookat(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                   double focal_px, int width, int height, double t_near,
                   double t_far) {
  Eigen::Vector3d fwd = (target - eye).normalized();
  Eigen::Vector3d up = Eigen::Vector3d::UnitZ();
  if (std::abs(fwd.dot(up)) > 0.999) up = Eigen::Vector3d::UnitX();
  Eigen::Vector3d right = fwd.cross(up).normalized();
  Eigen::Vector3d down = fwd.cross(right).normalized();
  Camera cam;
  cam.R.row(0) = right.transpose();
  cam.R.row(1) = down.transpose();
  cam.R.row(2) = fwd.transpose();
  cam.t = -cam.R * eye;
  cam.K << focal_px, 0, width / 2.0, 0, focal_px, height / 2.0, 0, 0, 1;
  cam.width = width;
  cam.height = height;
  cam.t_near = t_near;
  cam.t_far = t_far;
  return cam;
}

std::vector<double> circular_encode(double p, int l_min, int l_max) {
  std::vector<double> out;
  out.reserve(2 * (l_max - l_min + 1));
  for (int l = l_min; l <= l_max; ++l) {
    double a = std::pow(2.0, l) * kPi * p;
    out.push_back(std::sin(a));
    out.push_back(std::cos(a));
  }
  return out;
}

}  // namespace lsf
