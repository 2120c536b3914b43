#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cegc/geometry.hpp"
#include "cegc/nn.hpp"

namespace cegc {

class DegenerateConfiguration : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PoseSolution {
  RigidTransform transform;
  double residual = 0.0;  // weighted RMS alignment error
};

/// Row-wise argmax of an [N, M] score matrix; ties go to the lowest column.
std::vector<std::size_t> select_correspondences(const Tensor& scores);

/// Minimum weight for a pair to count as support.
inline constexpr double kMinSupportWeight = 1e-6;

/// Closed-form weighted rigid fit mapping src[i] onto tgt[i] with reflection
/// correction. Throws DegenerateConfiguration on insufficient or collinear
/// support and std::invalid_argument on size mismatch or non-finite input.
PoseSolution weighted_kabsch(std::span<const Vec3> src, std::span<const Vec3> tgt,
                             std::span<const double> w);

/// Rotation maximizing tr(R H) for a 3x3 cross-covariance H (row-major tensor),
/// differentiable through the SVD.
Tensor kabsch_rotation(const Tensor& h);

/// Number of backward passes where a singular-value gap fell below the guard.
std::size_t kabsch_gap_events();

struct TensorPose {
  Tensor rotation;     // [3, 3]
  Tensor translation;  // [3]
};

/// Differentiable counterpart of weighted_kabsch: src, tgt [N, 3], w [N].
TensorPose weighted_kabsch_tensor(const Tensor& src, const Tensor& tgt, const Tensor& w);

/// Value of `hard`, gradient routed to `surrogate` (same shape).
Tensor straight_through(const Tensor& hard, const Tensor& surrogate);

/// Target coordinates selected by the row argmax of `scores`. The forward value
/// is the hard selection; the gradient follows softmax(scores / temperature) @ oy.
Tensor matched_points(const Tensor& scores, const Tensor& oy, double temperature);

/// Per-row confidence w_i = sigmoid(f(max_j modulated[i, j, :])).
class ConfidenceWeightHead {
 public:
  ConfidenceWeightHead() = default;
  ConfidenceWeightHead(ParameterStore& store, const std::string& name, std::size_t channels, Rng& rng);

  /// modulated: [N, M, C] -> w [N]
  Tensor forward(const Tensor& modulated) const;
  Linear& projection() { return proj_; }

 private:
  Linear proj_;
};

}  // namespace cegc
