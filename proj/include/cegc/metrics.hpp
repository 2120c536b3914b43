#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "cegc/geometry.hpp"
#include "cegc/solver.hpp"

namespace cegc {

struct MetricReport {
  double rmse_r = 0.0;  // degrees
  double rmse_t = 0.0;
  double mae_r = 0.0;   // degrees
  double mae_t = 0.0;
  double err_r = 0.0;   // mean geodesic angle, degrees
  double err_t = 0.0;   // mean translation error norm
  std::size_t n = 0;
};

/// Geodesic angle between two rotations in degrees, in [0, 180].
double rotation_error_deg(const Mat3& est, const Mat3& gt);
double translation_error(const Vec3& est, const Vec3& gt);

/// Angle difference wrapped to (-180, 180].
double wrap_degrees(double d);

/// Per-axis Euler residuals (intrinsic Z-Y-X, ordered x, y, z) in degrees.
Vec3 euler_residual_deg(const Mat3& est, const Mat3& gt);

/// RMSE/MAE pool all three axes of every sample; Error(R)/Error(t) are sample
/// means. Throws on empty or misaligned lists and on invalid rotations.
MetricReport pose_metrics(const std::vector<RigidTransform>& est, const std::vector<RigidTransform>& gt);

void write_report_csv_header(std::ostream& out);
void write_report_csv_row(std::ostream& out, const std::string& method, const MetricReport& r);
std::string report_json(const std::vector<std::pair<std::string, MetricReport>>& reports);

struct IcpResult {
  PoseSolution solution;
  std::size_t iterations = 0;
  bool converged = false;
  bool degenerate = false;  // stopped early on a degenerate covariance
};

/// Point-to-point ICP from the identity: nearest-neighbour matches, unweighted
/// Kabsch, stop after max_iters or when the incremental pose change < tol.
IcpResult icp_baseline(const PointCloud& source, const PointCloud& target, std::size_t max_iters = 50,
                       double tol = 1e-6);

}  // namespace cegc
