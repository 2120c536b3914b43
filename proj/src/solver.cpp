#include "cegc/solver.hpp"

#include <Eigen/SVD>
#include <atomic>
#include <cmath>
#include <iostream>

namespace cegc {

namespace {
constexpr double kGapEps = 1e-8;
std::atomic<std::size_t> g_gap_events{0};

struct SignedSvd {
  Mat3 u;
  Mat3 v;  // reflection folded in: R = v u^T
  Vec3 s;  // signed singular values
};

SignedSvd signed_svd(const Mat3& h) {
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  SignedSvd out{svd.matrixU(), svd.matrixV(), svd.singularValues()};
  if ((out.v * out.u.transpose()).determinant() < 0.0) {
    out.v.col(2) *= -1.0;
    out.s[2] *= -1.0;
  }
  return out;
}

Mat3 to_mat3(std::span<const double> v) {
  Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = v[r * 3 + c];
  return m;
}
}  // namespace

std::vector<std::size_t> select_correspondences(const Tensor& scores) {
  if (scores.rank() != 2 || scores.shape()[1] == 0) {
    throw ShapeError("select_correspondences: expected a non-empty [N, M] matrix, got " +
                     shape_str(scores.shape()));
  }
  return max(detach(scores), 1).indices;
}

PoseSolution weighted_kabsch(std::span<const Vec3> src, std::span<const Vec3> tgt,
                             std::span<const double> w) {
  if (src.size() != tgt.size() || src.size() != w.size()) {
    throw std::invalid_argument("weighted_kabsch: " + std::to_string(src.size()) + " source, " +
                                std::to_string(tgt.size()) + " target, " +
                                std::to_string(w.size()) + " weights");
  }
  double total = 0.0;
  std::size_t support = 0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (!src[i].allFinite() || !tgt[i].allFinite() || !std::isfinite(w[i])) {
      throw std::invalid_argument("weighted_kabsch: non-finite input at pair " + std::to_string(i));
    }
    if (w[i] < 0.0) throw std::invalid_argument("weighted_kabsch: negative weight at pair " + std::to_string(i));
    total += w[i];
    if (w[i] > kMinSupportWeight) ++support;
  }
  if (total <= 0.0) throw DegenerateConfiguration("weighted_kabsch: weights sum to zero");
  if (support < 3) {
    throw DegenerateConfiguration("weighted_kabsch: only " + std::to_string(support) +
                                  " pairs carry weight above 1e-6 (need 3)");
  }
  Vec3 cx = Vec3::Zero(), cy = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    cx += w[i] * src[i];
    cy += w[i] * tgt[i];
  }
  cx /= total;
  cy /= total;
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) h += w[i] * (src[i] - cx) * (tgt[i] - cy).transpose();

  const SignedSvd svd = signed_svd(h);
  const double scale = std::max(std::abs(svd.s[0]), 1e-300);
  if (std::abs(svd.s[1]) <= 1e-10 * scale || svd.s[0] == 0.0) {
    throw DegenerateConfiguration("weighted_kabsch: cross-covariance has rank below 2 (collinear support)");
  }
  PoseSolution out;
  out.transform.R = svd.v * svd.u.transpose();
  out.transform.t = cy - out.transform.R * cx;
  audit_rotation(out.transform.R);
  double err = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) err += w[i] * (out.transform.apply(src[i]) - tgt[i]).squaredNorm();
  out.residual = std::sqrt(err / total);
  return out;
}

std::size_t kabsch_gap_events() { return g_gap_events.load(); }

Tensor kabsch_rotation(const Tensor& h) {
  if (h.shape() != Shape{3, 3}) throw ShapeError("kabsch_rotation: expected [3, 3], got " + shape_str(h.shape()));
  const Mat3 hm = to_mat3(h.data());
  if (!hm.allFinite()) throw std::invalid_argument("kabsch_rotation: non-finite cross-covariance");
  const SignedSvd svd = signed_svd(hm);
  const Mat3 r = svd.v * svd.u.transpose();
  audit_rotation(r);
  std::vector<double> value(9);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) value[i * 3 + j] = r(i, j);
  return make_result({3, 3}, std::move(value), "kabsch_rotation", {h}, [svd](Node& self) {
    Node& parent = *self.parents[0];
    if (!parent.requires_grad) return;
    parent.ensure_grad();
    const Mat3 g = to_mat3(self.grad);
    const Mat3 y = svd.v.transpose() * g * svd.u;
    Mat3 z = Mat3::Zero();
    bool gap = false;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        if (i == j) continue;
        const double denom = svd.s[i] + svd.s[j];
        if (std::abs(denom) < kGapEps) {
          gap = true;
          continue;
        }
        z(i, j) = (y(i, j) - y(j, i)) / denom;
      }
    if (gap && g_gap_events.fetch_add(1) == 0) {
      std::cerr << "warning: kabsch backward hit a collapsed singular-value gap; "
                   "affected gradient terms set to zero\n";
    }
    const Mat3 dh = svd.u * z.transpose() * svd.v.transpose();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) parent.grad[i * 3 + j] += dh(i, j);
  });
}

TensorPose weighted_kabsch_tensor(const Tensor& src, const Tensor& tgt, const Tensor& w) {
  const std::size_t n = src.shape()[0];
  if (src.shape() != Shape{n, 3} || tgt.shape() != Shape{n, 3} || w.shape() != Shape{n}) {
    throw ShapeError("weighted_kabsch_tensor: shapes " + shape_str(src.shape()) + ", " +
                     shape_str(tgt.shape()) + ", " + shape_str(w.shape()) + " are inconsistent");
  }
  std::size_t support = 0;
  for (double v : w.data()) support += v > kMinSupportWeight;
  if (support < 3) {
    throw DegenerateConfiguration("weighted_kabsch: only " + std::to_string(support) +
                                  " pairs carry weight above 1e-6 (need 3)");
  }
  Tensor wc = reshape(w, {n, 1});
  Tensor total = sum_all(w);
  Tensor cx = sum(src * wc, 0) / total;  // [3]
  Tensor cy = sum(tgt * wc, 0) / total;
  Tensor xs = src - reshape(cx, {1, 3});
  Tensor ys = tgt - reshape(cy, {1, 3});
  Tensor h = matmul(transpose(xs * wc), ys);
  TensorPose out;
  out.rotation = kabsch_rotation(h);
  out.translation = cy - reshape(matmul(out.rotation, reshape(cx, {3, 1})), {3});
  return out;
}

Tensor straight_through(const Tensor& hard, const Tensor& surrogate) {
  if (hard.shape() != surrogate.shape()) {
    throw ShapeError("straight_through: " + shape_str(hard.shape()) + " vs " + shape_str(surrogate.shape()));
  }
  std::vector<double> value(hard.data().begin(), hard.data().end());
  return make_result(hard.shape(), std::move(value), "straight_through", {surrogate}, [](Node& self) {
    Node& parent = *self.parents[0];
    if (!parent.requires_grad) return;
    parent.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) parent.grad[i] += self.grad[i];
  });
}

Tensor matched_points(const Tensor& scores, const Tensor& oy, double temperature) {
  const auto idx = select_correspondences(scores);
  Tensor hard = gather_rows(detach(oy), idx);
  Tensor soft = matmul(softmax(scale(scores, 1.0 / temperature), 1), oy);
  return straight_through(hard, soft);
}

ConfidenceWeightHead::ConfidenceWeightHead(ParameterStore& store, const std::string& name,
                                           std::size_t channels, Rng& rng)
    : proj_(store, name, channels, 1, rng) {}

Tensor ConfidenceWeightHead::forward(const Tensor& modulated) const {
  if (modulated.rank() != 3) throw ShapeError("confidence weights: expected [N, M, C], got " + shape_str(modulated.shape()));
  const std::size_t n = modulated.shape()[0];
  return reshape(sigmoid(proj_.forward(max(modulated, 1).values)), {n});
}

}  // namespace cegc
