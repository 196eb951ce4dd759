#pragma once

#include <Eigen/Core>
#include <string>

#include "hdgt/tensor.hpp"

namespace hdgt {

// Pinhole camera. World points map to the camera frame as
// x_cam = rotation * x_world + translation; pixel u is the column
// (fx * x/z + cx) and v the row (fy * y/z + cy).
struct Camera {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};

// Throws ConfigError if the rotation is not special-orthogonal within 1e-9
// or the focal lengths are not positive.
void validate_camera(const Camera& cam);

struct Projection {
  double u = 0.0, v = 0.0;
  double depth = 0.0;  // camera-frame z; <= 0 means behind the camera and
                       // |depth| < 1e-12 means the projection is degenerate
                       // (u, v are left at 0) — treat both as invalid.
};

Projection project(const Eigen::Vector3d& point, const Camera& cam);

// Exact right-inverse of project for positive depths.
// Throws std::domain_error for depth <= 0.
Eigen::Vector3d unproject(double u, double v, double depth, const Camera& cam);

// Continuous bilinear lookup at column u, row v of a [h, w] or [h, w, c]
// tensor (integer coordinates are sample points). Coordinates are clamped
// to the valid rectangle; use in_bounds to reject out-of-range lookups first.
bool in_bounds(const Tensor& img, double u, double v);
double bilinear_sample(const Tensor& img, double u, double v, std::size_t channel = 0);

// Per-pixel cross-view residuals: for every pixel of view i, unproject with
// depth_i, project into view j, and compare depths (r_d) and colors (r_c,
// Euclidean RGB distance against the bilinearly sampled neighbor image).
// valid = 0 where the reprojection is degenerate, behind the camera, or
// outside the neighbor image; residuals are 0 there.
struct ResidualField {
  Tensor r_d;    // [H, W]
  Tensor r_c;    // [H, W]
  Tensor valid;  // [H, W] in {0, 1}
};

ResidualField reprojection_residuals(const Tensor& view_i, const Tensor& view_j,
                                     const Tensor& depth_i, const Tensor& depth_j,
                                     const Camera& cam_i, const Camera& cam_j);

// Camera text file: 16 lines — fx fy cx cy, 9 rotation entries row-major,
// 3 translation entries, one value per line.
void save_camera(const std::string& path, const Camera& cam);
Camera load_camera(const std::string& path);

}  // namespace hdgt
