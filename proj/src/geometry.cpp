#include "cegc/geometry.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <mutex>
#include <stdexcept>

namespace cegc {

Vec3 PointCloud::centroid() const {
  Vec3 c = Vec3::Zero();
  for (const auto& p : points) c += p;
  return points.empty() ? c : Vec3(c / static_cast<double>(points.size()));
}

void PointCloud::validate() const {
  if (points.empty()) throw std::invalid_argument("point cloud '" + id + "' has no points");
  for (const auto& p : points) {
    if (!p.allFinite()) throw std::invalid_argument("point cloud '" + id + "' has non-finite coordinates");
  }
}

PointCloud RigidTransform::apply(const PointCloud& cloud) const {
  PointCloud out;
  out.id = cloud.id;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back(apply(p));
  return out;
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform inv;
  inv.R = R.transpose();
  inv.t = -(inv.R * t);
  return inv;
}

RigidTransform RigidTransform::compose(const RigidTransform& other) const {
  RigidTransform out;
  out.R = R * other.R;
  out.t = R * other.t + t;
  return out;
}

Mat3 rotation_x(double a) {
  Mat3 m;
  m << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
  return m;
}

Mat3 rotation_y(double a) {
  Mat3 m;
  m << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
  return m;
}

Mat3 rotation_z(double a) {
  Mat3 m;
  m << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  return m;
}

Mat3 euler_zyx_to_matrix(const Vec3& xyz) {
  return rotation_z(xyz.z()) * rotation_y(xyz.y()) * rotation_x(xyz.x());
}

Vec3 matrix_to_euler_zyx(const Mat3& R) {
  const double sy = std::clamp(-R(2, 0), -1.0, 1.0);
  const double y = std::asin(sy);
  double x, z;
  if (std::abs(sy) < 1.0 - 1e-12) {
    x = std::atan2(R(2, 1), R(2, 2));
    z = std::atan2(R(1, 0), R(0, 0));
  } else {
    // gimbal lock: fold everything into z
    x = 0.0;
    z = std::atan2(-R(0, 1), R(1, 1));
  }
  return {x, y, z};
}

double orthogonality_error(const Mat3& R) {
  return (R.transpose() * R - Mat3::Identity()).norm();
}

bool is_rotation(const Mat3& R, double tol) {
  return R.allFinite() && orthogonality_error(R) < tol && std::abs(R.determinant() - 1.0) <= tol;
}

namespace {
std::mutex g_audit_mutex;
RotationAuditSummary g_audit;
}  // namespace

void audit_rotation(const Mat3& R) {
  const double orth = R.allFinite() ? orthogonality_error(R) : INFINITY;
  const double det = R.allFinite() ? std::abs(R.determinant() - 1.0) : INFINITY;
  std::lock_guard lock(g_audit_mutex);
  ++g_audit.count;
  if (!(orth < 1e-5 && det <= 1e-5)) ++g_audit.violations;
  g_audit.worst_orthogonality = std::max(g_audit.worst_orthogonality, orth);
  g_audit.worst_det_deviation = std::max(g_audit.worst_det_deviation, det);
}

RotationAuditSummary rotation_audit() {
  std::lock_guard lock(g_audit_mutex);
  return g_audit;
}

void reset_rotation_audit() {
  std::lock_guard lock(g_audit_mutex);
  g_audit = {};
}

Tensor to_tensor(const std::vector<Vec3>& points) {
  std::vector<double> v;
  v.reserve(points.size() * 3);
  for (const auto& p : points) {
    v.push_back(p.x());
    v.push_back(p.y());
    v.push_back(p.z());
  }
  return Tensor::from({points.size(), 3}, std::move(v));
}

Tensor to_tensor(const PointCloud& cloud) { return to_tensor(cloud.points); }

namespace {
std::pair<Vec3, double> center_and_radius(const std::vector<Vec3>& pts) {
  Vec3 c = Vec3::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  double r = 0.0;
  for (const auto& p : pts) r = std::max(r, (p - c).norm());
  return {c, r};
}
}  // namespace

Mesh normalize_unit_sphere(const Mesh& mesh) {
  if (mesh.vertices.empty()) throw std::invalid_argument("normalize: mesh has no vertices");
  auto [c, r] = center_and_radius(mesh.vertices);
  if (r <= 0.0) throw std::invalid_argument("normalize: mesh has zero extent");
  Mesh out = mesh;
  for (auto& v : out.vertices) v = (v - c) / r;
  return out;
}

PointCloud normalize_unit_sphere(const PointCloud& cloud) {
  cloud.validate();
  auto [c, r] = center_and_radius(cloud.points);
  PointCloud out = cloud;
  if (r <= 0.0) r = 1.0;
  for (auto& p : out.points) p = (p - c) / r;
  return out;
}

}  // namespace cegc
