#include "cegc/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cegc {

Tensor overlap_bce(const Tensor& pred, const std::vector<bool>& target, double normalizer) {
  if (pred.numel() != target.size()) {
    throw std::invalid_argument("overlap_bce: " + std::to_string(pred.numel()) + " predictions for " +
                                std::to_string(target.size()) + " labels");
  }
  if (!(normalizer > 0.0)) throw std::invalid_argument("overlap_bce: normalizer must be positive");
  const std::size_t m = target.size();
  std::vector<double> y(m), not_y(m);
  for (std::size_t i = 0; i < m; ++i) {
    y[i] = target[i] ? 1.0 : 0.0;
    not_y[i] = 1.0 - y[i];
  }
  Tensor p = clamp(reshape(pred, {m}), kBceClamp, 1.0 - kBceClamp);
  Tensor labels = Tensor::from({m}, std::move(y));
  Tensor not_labels = Tensor::from({m}, std::move(not_y));
  Tensor ll = labels * log(p) + not_labels * log(add_scalar(neg(p), 1.0));
  return scale(sum_all(ll), -1.0 / normalizer);
}

Tensor pose_loss(const Tensor& rotation, const Tensor& translation, const RigidTransform& gt) {
  std::vector<double> rt(9), t(3);
  for (int i = 0; i < 3; ++i) {
    t[i] = gt.t[i];
    for (int j = 0; j < 3; ++j) rt[i * 3 + j] = gt.R(j, i);
  }
  std::vector<double> eye(9, 0.0);
  eye[0] = eye[4] = eye[8] = 1.0;
  Tensor rot_term = sum_all(square(matmul(Tensor::from({3, 3}, rt), rotation) - Tensor::from({3, 3}, eye)));
  Tensor trans_term = sum_all(square(Tensor::from({3}, t) - reshape(translation, {3})));
  return rot_term + trans_term;
}

double pose_loss(const RigidTransform& est, const RigidTransform& gt) {
  return (gt.R.transpose() * est.R - Mat3::Identity()).squaredNorm() + (gt.t - est.t).squaredNorm();
}

void check_lambda(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("loss weight lambda must lie in [0, 1], got " + std::to_string(lambda));
  }
}

Tensor total_loss(const Tensor& lo, const Tensor& lr, double lambda) {
  check_lambda(lambda);
  return scale(lo, lambda) + scale(lr, 1.0 - lambda);
}

double total_loss(double lo, double lr, double lambda) {
  check_lambda(lambda);
  return lambda * lo + (1.0 - lambda) * lr;
}

}  // namespace cegc
