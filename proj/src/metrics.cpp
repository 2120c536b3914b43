#include "cegc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numbers>
#include <stdexcept>

#include "cegc/io.hpp"
#include "cegc/knn.hpp"

namespace cegc {

namespace {
constexpr double kDeg = 180.0 / std::numbers::pi;
}

double rotation_error_deg(const Mat3& est, const Mat3& gt) {
  const double c = std::clamp(((gt.transpose() * est).trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c) * kDeg;
}

double translation_error(const Vec3& est, const Vec3& gt) { return (gt - est).norm(); }

double wrap_degrees(double d) {
  double w = std::fmod(d, 360.0);
  if (w > 180.0) w -= 360.0;
  if (w <= -180.0) w += 360.0;
  return w;
}

Vec3 euler_residual_deg(const Mat3& est, const Mat3& gt) {
  const Vec3 a = matrix_to_euler_zyx(est) * kDeg;
  const Vec3 b = matrix_to_euler_zyx(gt) * kDeg;
  return Vec3(wrap_degrees(a[0] - b[0]), wrap_degrees(a[1] - b[1]), wrap_degrees(a[2] - b[2]));
}

MetricReport pose_metrics(const std::vector<RigidTransform>& est, const std::vector<RigidTransform>& gt) {
  if (est.empty()) throw std::invalid_argument("pose_metrics: no samples");
  if (est.size() != gt.size()) {
    throw std::invalid_argument("pose_metrics: " + std::to_string(est.size()) + " estimates for " +
                                std::to_string(gt.size()) + " ground truths");
  }
  MetricReport r;
  r.n = est.size();
  double sq_r = 0.0, abs_r = 0.0, sq_t = 0.0, abs_t = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    if (!is_rotation(est[i].R) || !is_rotation(gt[i].R)) {
      throw std::invalid_argument("pose_metrics: sample " + std::to_string(i) + " holds an invalid rotation");
    }
    const Vec3 dr = euler_residual_deg(est[i].R, gt[i].R);
    const Vec3 dt = est[i].t - gt[i].t;
    sq_r += dr.squaredNorm();
    abs_r += dr.cwiseAbs().sum();
    sq_t += dt.squaredNorm();
    abs_t += dt.cwiseAbs().sum();
    r.err_r += rotation_error_deg(est[i].R, gt[i].R);
    r.err_t += translation_error(est[i].t, gt[i].t);
  }
  const double n = static_cast<double>(r.n);
  r.rmse_r = std::sqrt(sq_r / (3.0 * n));
  r.mae_r = abs_r / (3.0 * n);
  r.rmse_t = std::sqrt(sq_t / (3.0 * n));
  r.mae_t = abs_t / (3.0 * n);
  r.err_r /= n;
  r.err_t /= n;
  return r;
}

void write_report_csv_header(std::ostream& out) {
  out << "method,RMSE(R),RMSE(t),MAE(R),MAE(t),Error(R),Error(t)\n";
}

void write_report_csv_row(std::ostream& out, const std::string& method, const MetricReport& r) {
  out << method << ',' << format_double(r.rmse_r) << ',' << format_double(r.rmse_t) << ','
      << format_double(r.mae_r) << ',' << format_double(r.mae_t) << ',' << format_double(r.err_r) << ','
      << format_double(r.err_t) << '\n';
}

std::string report_json(const std::vector<std::pair<std::string, MetricReport>>& reports) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& [method, r] : reports) {
    j.push_back({{"method", method},
                 {"RMSE(R)", r.rmse_r},
                 {"RMSE(t)", r.rmse_t},
                 {"MAE(R)", r.mae_r},
                 {"MAE(t)", r.mae_t},
                 {"Error(R)", r.err_r},
                 {"Error(t)", r.err_t},
                 {"n", r.n}});
  }
  return j.dump(2) + "\n";
}

IcpResult icp_baseline(const PointCloud& source, const PointCloud& target, std::size_t max_iters, double tol) {
  source.validate();
  target.validate();
  IcpResult out;
  RigidTransform current;
  std::vector<Vec3> moved = source.points;
  const std::vector<double> ones(source.size(), 1.0);
  std::vector<Vec3> matched(source.size());
  for (std::size_t it = 0; it < max_iters; ++it) {
    const NearestResult nn = nearest_neighbors(moved, target.points);
    for (std::size_t i = 0; i < moved.size(); ++i) matched[i] = target.points[nn.index[i]];
    PoseSolution step;
    try {
      step = weighted_kabsch(moved, matched, ones);
    } catch (const DegenerateConfiguration&) {
      out.degenerate = true;
      break;
    }
    current = step.transform.compose(current);
    for (std::size_t i = 0; i < moved.size(); ++i) moved[i] = current.apply(source.points[i]);
    out.iterations = it + 1;
    const double delta = (step.transform.R - Mat3::Identity()).norm() + step.transform.t.norm();
    if (delta < tol) {
      out.converged = true;
      break;
    }
  }
  out.solution.transform = current;
  audit_rotation(current.R);
  double err = 0.0;
  const NearestResult nn = nearest_neighbors(moved, target.points);
  for (double d : nn.squared_distance) err += d;
  out.solution.residual = std::sqrt(err / static_cast<double>(moved.size()));
  return out;
}

}  // namespace cegc
