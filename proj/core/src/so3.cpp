#include "rmfn/so3.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rmfn {

namespace {

Eigen::Matrix3d skew(const Eigen::Vector3d& u) {
  Eigen::Matrix3d k;
  k << 0, -u.z(), u.y(), u.z(), 0, -u.x(), -u.y(), u.x(), 0;
  return k;
}

}  // namespace

Eigen::Matrix3d rodrigues(const AxisAngle& aa) {
  const Eigen::Matrix3d k = skew(aa.u);
  return Eigen::Matrix3d::Identity() + std::sin(aa.theta) * k +
         (1.0 - std::cos(aa.theta)) * k * k;
}

double geodesic_distance(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  const double tr = (a.transpose() * b).trace();
  return std::acos(std::clamp((tr - 1.0) / 2.0, -1.0, 1.0));
}

bool is_rotation(const Eigen::Matrix3d& r, double tol) {
  const Eigen::Matrix3d e = r.transpose() * r - Eigen::Matrix3d::Identity();
  return e.cwiseAbs().maxCoeff() <= tol && std::abs(r.determinant() - 1.0) <= tol;
}

Eigen::Matrix3d sample_uniform_rotation(Rng& rng) {
  double w, x, y, z, norm2;
  do {
    w = rng.normal();
    x = rng.normal();
    y = rng.normal();
    z = rng.normal();
    norm2 = w * w + x * x + y * y + z * z;
  } while (norm2 < 1e-24);
  const double inv = 1.0 / std::sqrt(norm2);
  return quat_to_matrix(w * inv, x * inv, y * inv, z * inv);
}

Eigen::Matrix3d perturb_pose(const Eigen::Matrix3d& gt, double min_deg, double max_deg,
                             Rng& rng) {
  if (min_deg < 0.0 || max_deg > 180.0 || min_deg > max_deg)
    throw std::invalid_argument("perturbation range must satisfy 0 <= min <= max <= 180");
  const double theta = rng.uniform(min_deg, max_deg) * M_PI / 180.0;
  Eigen::Vector3d u;
  double n2;
  do {
    u = {rng.normal(), rng.normal(), rng.normal()};
    n2 = u.squaredNorm();
  } while (n2 < 1e-24);
  u /= std::sqrt(n2);
  return rodrigues({theta, u}) * gt;
}

AxisAngle project_constraints(double raw_theta, const Eigen::Vector3d& raw_u) {
  AxisAngle aa;
  aa.theta = std::clamp(raw_theta, 0.0, M_PI);
  const double n = raw_u.norm();
  aa.u = n < 1e-12 ? Eigen::Vector3d::UnitZ() : Eigen::Vector3d(raw_u / n);
  return aa;
}

Eigen::Matrix3d quat_to_matrix(double w, double x, double y, double z) {
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Eigen::Vector4d matrix_to_quat(const Eigen::Matrix3d& r) {
  // Shepperd's method: pick the largest diagonal combination for stability.
  const double tr = r.trace();
  Eigen::Vector4d q;  // (w, x, y, z)
  if (tr > 0.0) {
    const double s = std::sqrt(tr + 1.0) * 2.0;
    q << 0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s,
        (r(1, 0) - r(0, 1)) / s;
  } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
    const double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2.0;
    q << (r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s,
        (r(0, 2) + r(2, 0)) / s;
  } else if (r(1, 1) > r(2, 2)) {
    const double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2.0;
    q << (r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s,
        (r(1, 2) + r(2, 1)) / s;
  } else {
    const double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2.0;
    q << (r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s, (r(1, 2) + r(2, 1)) / s,
        0.25 * s;
  }
  if (q[0] < 0.0) q = -q;
  q.normalize();
  return q;
}

}  // namespace rmfn
