#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cegc/geometry.hpp"

namespace cegc {

/// One training / evaluation sample. The target is the source shape moved by
/// `gt`, so gt maps source coordinates onto target coordinates.
struct RegistrationPair {
  PointCloud source;
  PointCloud target;
  RigidTransform gt;
  std::vector<bool> gt_mask_src;
  std::vector<bool> gt_mask_tgt;
  double overlap_ratio = 1.0;
};

struct OverlapMasks {
  std::vector<bool> source;
  std::vector<bool> target;
};

struct NoiseConfig {
  double sigma = 0.01;
  double clip = 0.05;
};

inline constexpr double kDefaultOverlapTau = 0.05;
inline constexpr double kMaxEulerDegrees = 45.0;
inline constexpr double kMaxTranslation = 1.0;

/// Area-proportional uniform sampling of n points over the triangles.
PointCloud sample_surface(const Mesh& mesh, std::size_t n, std::uint64_t seed);

/// Euler angles (Z-Y-X) uniform in [-45°, 45°], translation uniform in [-1, 1]^3.
RigidTransform random_transform(std::uint64_t seed);

/// Keeps ceil(keep_fraction * M) points with the largest projection onto a
/// random unit direction through the centroid. Original order is preserved.
PointCloud plane_crop(const PointCloud& cloud, double keep_fraction, std::uint64_t seed);
PointCloud plane_crop_along(const PointCloud& cloud, double keep_fraction, const Vec3& direction);
std::size_t crop_count(std::size_t m, double keep_fraction);

/// Per-coordinate N(0, sigma^2) perturbation clamped to [-clip, clip].
PointCloud add_gaussian_noise(const PointCloud& cloud, double sigma, double clip,
                              std::uint64_t seed);

/// A point overlaps when its nearest neighbour in the other cloud (after
/// mapping source points by gt) lies within tau.
OverlapMasks label_overlap(const PointCloud& source, const PointCloud& target,
                           const RigidTransform& gt, double tau);

struct PairOptions {
  std::size_t points = 1024;
  double keep_fraction = 0.7;
  std::optional<NoiseConfig> noise;
  double tau = kDefaultOverlapTau;
};

/// Samples the mesh once, crops two independent copies, moves the second by a
/// random gt transform, optionally adds noise to each, shuffles the target
/// order and labels the overlap.
RegistrationPair make_pair(const Mesh& mesh, const PairOptions& options, std::uint64_t seed);

/// Built-in procedural meshes (asymmetric, unit radius) for synthetic datasets.
std::vector<std::string> builtin_shape_names();
Mesh builtin_shape(const std::string& name);

/// Distinct 64-bit stream id for a (seed, purpose) pair.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace cegc
