#pragma once

#include <Eigen/Dense>

#include "rmfn/rng.hpp"

namespace rmfn {

// theta in [0, pi], u a unit axis. Raw optimizer values are re-projected
// onto this set with project_constraints.
struct AxisAngle {
  double theta = 0.0;
  Eigen::Vector3d u = Eigen::Vector3d::UnitZ();
};

// delta-R = I + sin(theta) [u]x + (1 - cos(theta)) [u]x^2.
Eigen::Matrix3d rodrigues(const AxisAngle& aa);

// Rotation angle of a^T b, clamped acos((trace - 1)/2), in [0, pi].
double geodesic_distance(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b);

// R^T R = I and det R = +1 within tol.
bool is_rotation(const Eigen::Matrix3d& r, double tol = 1e-10);

// Haar-uniform rotation via a normalized 4D Gaussian quaternion.
Eigen::Matrix3d sample_uniform_rotation(Rng& rng);

// rodrigues(theta, u) * gt with theta ~ U(min_deg, max_deg) (degrees) and u
// uniform on the sphere; the geodesic distance to gt equals the drawn angle.
Eigen::Matrix3d perturb_pose(const Eigen::Matrix3d& gt, double min_deg, double max_deg,
                             Rng& rng);

// Clamps theta to [0, pi] and normalizes u; axes shorter than 1e-12 fall
// back to +z (the rotation is numerically indistinguishable from any axis).
AxisAngle project_constraints(double raw_theta, const Eigen::Vector3d& raw_u);

// Unit quaternion (w, x, y, z) <-> rotation matrix. matrix_to_quat fixes the
// sign so w >= 0, making the serialization canonical.
Eigen::Matrix3d quat_to_matrix(double w, double x, double y, double z);
Eigen::Vector4d matrix_to_quat(const Eigen::Matrix3d& r);

}  // namespace rmfn
