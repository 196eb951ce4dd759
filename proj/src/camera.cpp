#include "hdgt/camera.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "hdgt/errors.hpp"

namespace hdgt {

void validate_camera(const Camera& cam) {
  if (!(cam.fx > 0.0) || !(cam.fy > 0.0)) {
    throw ConfigError("camera: focal lengths must be positive, got fx=" +
                      std::to_string(cam.fx) + " fy=" + std::to_string(cam.fy));
  }
  const Eigen::Matrix3d gram = cam.rotation.transpose() * cam.rotation;
  if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-9) {
    throw ConfigError("camera: rotation is not orthonormal within 1e-9");
  }
  if (std::abs(cam.rotation.determinant() - 1.0) > 1e-9) {
    throw ConfigError("camera: rotation determinant is not +1 within 1e-9");
  }
}

Projection project(const Eigen::Vector3d& point, const Camera& cam) {
  const Eigen::Vector3d pc = cam.rotation * point + cam.translation;
  Projection out;
  out.depth = pc.z();
  if (std::abs(pc.z()) < 1e-12) return out;  // degenerate; u, v stay 0
  out.u = cam.fx * pc.x() / pc.z() + cam.cx;
  out.v = cam.fy * pc.y() / pc.z() + cam.cy;
  return out;
}

Eigen::Vector3d unproject(double u, double v, double depth, const Camera& cam) {
  if (!(depth > 0.0)) {
    throw std::domain_error("unproject: depth must be positive, got " +
                            std::to_string(depth));
  }
  const Eigen::Vector3d pc((u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth,
                           depth);
  return cam.rotation.transpose() * (pc - cam.translation);
}

bool in_bounds(const Tensor& img, double u, double v) {
  const auto h = static_cast<double>(img.shape[0]);
  const auto w = static_cast<double>(img.shape[1]);
  return u >= 0.0 && u <= w - 1.0 && v >= 0.0 && v <= h - 1.0;
}

double bilinear_sample(const Tensor& img, double u, double v, std::size_t channel) {
  const std::size_t h = img.shape[0], w = img.shape[1];
  const double uc = std::min(std::max(u, 0.0), static_cast<double>(w - 1));
  const double vc = std::min(std::max(v, 0.0), static_cast<double>(h - 1));
  const std::size_t c0 = static_cast<std::size_t>(uc);
  const std::size_t r0 = static_cast<std::size_t>(vc);
  const std::size_t c1 = std::min(c0 + 1, w - 1);
  const std::size_t r1 = std::min(r0 + 1, h - 1);
  const double fu = uc - static_cast<double>(c0), fv = vc - static_cast<double>(r0);
  const auto value = [&](std::size_t r, std::size_t c) {
    return img.rank() == 2 ? img(r, c) : img(r, c, channel);
  };
  return (1 - fv) * ((1 - fu) * value(r0, c0) + fu * value(r0, c1)) +
         fv * ((1 - fu) * value(r1, c0) + fu * value(r1, c1));
}

ResidualField reprojection_residuals(const Tensor& view_i, const Tensor& view_j,
                                     const Tensor& depth_i, const Tensor& depth_j,
                                     const Camera& cam_i, const Camera& cam_j) {
  if (view_i.rank() != 3 || view_j.rank() != 3 || view_i.shape[2] != 3 ||
      view_j.shape[2] != 3) {
    throw ShapeError("reprojection_residuals: views must be [h, w, 3]");
  }
  if (depth_i.rank() != 2 || depth_i.shape[0] != view_i.shape[0] ||
      depth_i.shape[1] != view_i.shape[1]) {
    throw ShapeError("reprojection_residuals: depth_i " + shape_str(depth_i.shape) +
                     " does not match view_i " + shape_str(view_i.shape));
  }
  if (depth_j.rank() != 2 || depth_j.shape[0] != view_j.shape[0] ||
      depth_j.shape[1] != view_j.shape[1]) {
    throw ShapeError("reprojection_residuals: depth_j " + shape_str(depth_j.shape) +
                     " does not match view_j " + shape_str(view_j.shape));
  }
  const std::size_t h = view_i.shape[0], w = view_i.shape[1];
  ResidualField out{Tensor({h, w}), Tensor({h, w}), Tensor({h, w})};
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double d = depth_i(r, c);
      if (!(d > 0.0)) continue;
      const Eigen::Vector3d world =
          unproject(static_cast<double>(c), static_cast<double>(r), d, cam_i);
      const Projection pj = project(world, cam_j);
      if (pj.depth <= 0.0 || std::abs(pj.depth) < 1e-12 ||
          !in_bounds(view_j, pj.u, pj.v)) {
        continue;
      }
      out.valid(r, c) = 1.0;
      out.r_d(r, c) = std::abs(pj.depth - bilinear_sample(depth_j, pj.u, pj.v));
      double acc = 0.0;
      for (std::size_t q = 0; q < 3; ++q) {
        const double diff = view_i(r, c, q) - bilinear_sample(view_j, pj.u, pj.v, q);
        acc += diff * diff;
      }
      out.r_c(r, c) = std::sqrt(acc);
    }
  }
  return out;
}

void save_camera(const std::string& path, const Camera& cam) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw MissingArtifactError("cannot write " + path);
  std::vector<double> values = {cam.fx, cam.fy, cam.cx, cam.cy};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) values.push_back(cam.rotation(r, c));
  for (int i = 0; i < 3; ++i) values.push_back(cam.translation(i));
  char buf[40];
  for (double v : values) {
    std::snprintf(buf, sizeof buf, "%.17g\n", v);
    os << buf;
  }
  if (!os) throw MissingArtifactError("write failed: " + path);
}

Camera load_camera(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw MissingArtifactError("cannot open " + path);
  std::vector<double> values;
  double v;
  while (is >> v) values.push_back(v);
  if (values.size() != 16) {
    throw ConfigError("camera file " + path + " must hold 16 values, got " +
                      std::to_string(values.size()));
  }
  Camera cam;
  cam.fx = values[0];
  cam.fy = values[1];
  cam.cx = values[2];
  cam.cy = values[3];
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) cam.rotation(r, c) = values[4 + 3 * r + c];
  for (int i = 0; i < 3; ++i) cam.translation(i) = values[13 + i];
  validate_camera(cam);
  return cam;
}

}  // namespace hdgt
