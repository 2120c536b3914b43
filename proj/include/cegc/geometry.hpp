#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "cegc/tensor.hpp"

namespace cegc {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct PointCloud {
  std::vector<Vec3> points;
  std::string id;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  Vec3 centroid() const;
  /// Throws std::invalid_argument when empty or any coordinate is non-finite.
  void validate() const;
};

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::size_t, 3>> faces;
};

/// x -> R x + t
struct RigidTransform {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  static RigidTransform identity() { return {}; }
  Vec3 apply(const Vec3& p) const { return R * p + t; }
  PointCloud apply(const PointCloud& cloud) const;
  RigidTransform inverse() const;
  /// (this ∘ other)(x) = this(other(x))
  RigidTransform compose(const RigidTransform& other) const;
};

Mat3 rotation_x(double radians);
Mat3 rotation_y(double radians);
Mat3 rotation_z(double radians);

/// Intrinsic Z-Y-X composition: R = Rz(z) * Ry(y) * Rx(x). Angles in radians,
/// ordered (x, y, z).
Mat3 euler_zyx_to_matrix(const Vec3& xyz);
/// Inverse of euler_zyx_to_matrix; returns (x, y, z) in radians.
Vec3 matrix_to_euler_zyx(const Mat3& R);

/// ||R^T R - I||_F
double orthogonality_error(const Mat3& R);
bool is_rotation(const Mat3& R, double tol = 1e-5);

/// Process-wide record of every rotation the library emits (solver outputs,
/// ICP results, sampled ground truth). Thread-safe.
struct RotationAuditSummary {
  std::size_t count = 0;
  std::size_t violations = 0;
  double worst_orthogonality = 0.0;
  double worst_det_deviation = 0.0;
};
void audit_rotation(const Mat3& R);
RotationAuditSummary rotation_audit();
void reset_rotation_audit();

/// [M, 3] tensor of the coordinates (no gradient).
Tensor to_tensor(const PointCloud& cloud);
Tensor to_tensor(const std::vector<Vec3>& points);

/// Centers at the vertex centroid and scales to unit max radius. Returns the
/// normalized copy.
Mesh normalize_unit_sphere(const Mesh& mesh);
PointCloud normalize_unit_sphere(const PointCloud& cloud);

}  // namespace cegc
