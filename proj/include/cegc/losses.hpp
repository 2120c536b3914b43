#pragma once

#include <vector>

#include "cegc/geometry.hpp"
#include "cegc/tensor.hpp"

namespace cegc {

inline constexpr double kBceClamp = 1e-7;

struct LossBreakdown {
  double l1 = 0.0;  // source overlap BCE
  double l2 = 0.0;  // target overlap BCE
  double lo = 0.0;  // l1 + l2
  double lr = 0.0;  // pose loss
  double total = 0.0;
  double lambda = 0.5;
};

/// -(1 / normalizer) * sum_i [y_i log p_i + (1 - y_i) log(1 - p_i)], with p
/// clamped to [1e-7, 1 - 1e-7]. `pred` holds M values in (0, 1).
Tensor overlap_bce(const Tensor& pred, const std::vector<bool>& target, double normalizer);

/// ||R*^T R - I||_F^2 + ||t* - t||^2
Tensor pose_loss(const Tensor& rotation, const Tensor& translation, const RigidTransform& gt);
double pose_loss(const RigidTransform& est, const RigidTransform& gt);

/// lambda * lo + (1 - lambda) * lr; lambda outside [0, 1] throws.
Tensor total_loss(const Tensor& lo, const Tensor& lr, double lambda);
double total_loss(double lo, double lr, double lambda);

void check_lambda(double lambda);

}  // namespace cegc
