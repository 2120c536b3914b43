#include "cegc/data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "cegc/nn.hpp"

namespace cegc {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finaliser over the combined value
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

PointCloud sample_surface(const Mesh& mesh, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("sample_surface: n must be at least 1");
  std::vector<double> cumulative;
  cumulative.reserve(mesh.faces.size());
  double total = 0.0;
  for (const auto& f : mesh.faces) {
    for (auto v : f) {
      if (v >= mesh.vertices.size()) throw std::invalid_argument("sample_surface: face index out of range");
    }
    const Vec3& a = mesh.vertices[f[0]];
    const Vec3& b = mesh.vertices[f[1]];
    const Vec3& c = mesh.vertices[f[2]];
    total += 0.5 * (b - a).cross(c - a).norm();
    cumulative.push_back(total);
  }
  if (!(total > 0.0)) throw std::invalid_argument("sample_surface: mesh has zero surface area");

  Rng rng(seed);
  PointCloud cloud;
  cloud.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform() * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    if (it == cumulative.end()) --it;
    const auto& f = mesh.faces[static_cast<std::size_t>(it - cumulative.begin())];
    const double r1 = std::sqrt(rng.uniform());
    const double r2 = rng.uniform();
    const Vec3& a = mesh.vertices[f[0]];
    const Vec3& b = mesh.vertices[f[1]];
    const Vec3& c = mesh.vertices[f[2]];
    cloud.points.push_back((1.0 - r1) * a + r1 * (1.0 - r2) * b + r1 * r2 * c);
  }
  return cloud;
}

RigidTransform random_transform(std::uint64_t seed) {
  Rng rng(seed);
  const double max_rad = kMaxEulerDegrees * std::numbers::pi / 180.0;
  Vec3 angles;
  for (int k = 0; k < 3; ++k) angles[k] = rng.uniform(-max_rad, max_rad);
  RigidTransform T;
  T.R = euler_zyx_to_matrix(angles);
  for (int k = 0; k < 3; ++k) T.t[k] = rng.uniform(-kMaxTranslation, kMaxTranslation);
  audit_rotation(T.R);
  return T;
}

std::size_t crop_count(std::size_t m, double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw std::invalid_argument("keep_fraction must lie in (0, 1]");
  }
  // tolerance guards products like 0.7 * 200 landing a hair above an integer
  const double raw = keep_fraction * static_cast<double>(m);
  auto k = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::clamp<std::size_t>(k, 1, m);
}

PointCloud plane_crop_along(const PointCloud& cloud, double keep_fraction, const Vec3& direction) {
  cloud.validate();
  const std::size_t keep = crop_count(cloud.size(), keep_fraction);
  const Vec3 c = cloud.centroid();
  const Vec3 d = direction.normalized();
  std::vector<double> proj(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) proj[i] = (cloud.points[i] - c).dot(d);
  std::vector<std::size_t> order(cloud.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return proj[a] > proj[b]; });
  order.resize(keep);
  std::sort(order.begin(), order.end());
  PointCloud out;
  out.id = cloud.id;
  out.points.reserve(keep);
  for (auto i : order) out.points.push_back(cloud.points[i]);
  return out;
}

PointCloud plane_crop(const PointCloud& cloud, double keep_fraction, std::uint64_t seed) {
  Rng rng(seed);
  Vec3 d;
  do {
    d = Vec3(rng.normal(), rng.normal(), rng.normal());
  } while (d.norm() < 1e-12);
  return plane_crop_along(cloud, keep_fraction, d);
}

PointCloud add_gaussian_noise(const PointCloud& cloud, double sigma, double clip,
                              std::uint64_t seed) {
  if (sigma < 0.0 || clip < 0.0) throw std::invalid_argument("noise: sigma and clip must be >= 0");
  PointCloud out = cloud;
  if (sigma == 0.0) return out;
  Rng rng(seed);
  for (auto& p : out.points)
    for (int k = 0; k < 3; ++k) p[k] += std::clamp(sigma * rng.normal(), -clip, clip);
  return out;
}

namespace {
std::vector<bool> within_tau(const std::vector<Vec3>& from, const std::vector<Vec3>& to,
                             double tau) {
  const double tau2 = tau * tau;
  std::vector<bool> mask(from.size(), false);
  for (std::size_t i = 0; i < from.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to) {
      best = std::min(best, (from[i] - q).squaredNorm());
      if (best <= tau2) break;
    }
    mask[i] = best <= tau2;
  }
  return mask;
}
}  // namespace

OverlapMasks label_overlap(const PointCloud& source, const PointCloud& target,
                           const RigidTransform& gt, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("label_overlap: tau must be positive");
  const PointCloud moved = gt.apply(source);
  return {within_tau(moved.points, target.points, tau),
          within_tau(target.points, moved.points, tau)};
}

RegistrationPair make_pair(const Mesh& mesh, const PairOptions& options, std::uint64_t seed) {
  const PointCloud base = sample_surface(mesh, options.points, derive_seed(seed, 1));
  RegistrationPair pair;
  pair.gt = random_transform(derive_seed(seed, 2));

  // Low keep fractions can crop two disjoint halves; retry with fresh directions.
  constexpr int kMaxAttempts = 16;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const std::uint64_t s = derive_seed(seed, 10 + static_cast<std::uint64_t>(attempt));
    PointCloud src = plane_crop(base, options.keep_fraction, derive_seed(s, 3));
    PointCloud tgt = plane_crop(base, options.keep_fraction, derive_seed(s, 4));
    tgt = pair.gt.apply(tgt);
    if (options.noise) {
      src = add_gaussian_noise(src, options.noise->sigma, options.noise->clip, derive_seed(s, 5));
      tgt = add_gaussian_noise(tgt, options.noise->sigma, options.noise->clip, derive_seed(s, 6));
    }
    // shuffle target so that index order carries no correspondence
    Rng rng(derive_seed(s, 7));
    for (std::size_t i = tgt.size(); i > 1; --i) std::swap(tgt.points[i - 1], tgt.points[rng.index(i)]);

    OverlapMasks masks = label_overlap(src, tgt, pair.gt, options.tau);
    const auto flagged = std::count(masks.source.begin(), masks.source.end(), true) +
                         std::count(masks.target.begin(), masks.target.end(), true);
    if (flagged == 0) continue;
    pair.source = std::move(src);
    pair.target = std::move(tgt);
    pair.gt_mask_src = std::move(masks.source);
    pair.gt_mask_tgt = std::move(masks.target);
    pair.overlap_ratio = static_cast<double>(flagged) /
                         static_cast<double>(pair.source.size() + pair.target.size());
    return pair;
  }
  throw std::runtime_error("make_pair: could not produce an overlapping pair");
}

}  // namespace cegc
