#include "cegc/hoce.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace cegc {

namespace {
constexpr double kNormEps = 1e-12;

void finish_mask(OverlapScores& s, std::size_t n_keep) {
  const std::size_t m = s.fused.numel();
  if (n_keep < 1) throw std::invalid_argument("overlap masking: n_keep must be at least 1");
  if (n_keep > m) {
    throw std::invalid_argument("overlap masking: n_keep " + std::to_string(n_keep) +
                                " exceeds " + std::to_string(m) + " points");
  }
  s.subset = top_n_indices(s.fused.data(), n_keep);
  s.mask.assign(m, false);
  for (auto i : s.subset) s.mask[i] = true;
}
}  // namespace

Tensor cosine_similarity_matrix(const Tensor& fx, const Tensor& fy, bool* zero_rows) {
  if (fx.rank() != 2 || fy.rank() != 2 || fx.shape()[1] != fy.shape()[1]) {
    throw ShapeError("cosine similarity: shapes " + shape_str(fx.shape()) + " and " +
                     shape_str(fy.shape()) + " are not compatible");
  }
  const std::size_t nx = fx.shape()[0], ny = fy.shape()[0];
  Tensor norm_x = norm_last(fx);
  Tensor norm_y = norm_last(fy);
  if (zero_rows) {
    auto tiny = [](double v) { return v < kNormEps; };
    *zero_rows = std::any_of(norm_x.data().begin(), norm_x.data().end(), tiny) ||
                 std::any_of(norm_y.data().begin(), norm_y.data().end(), tiny);
  }
  const double inf = std::numeric_limits<double>::infinity();
  Tensor denom = reshape(clamp(norm_x, kNormEps, inf), {nx, 1}) *
                 reshape(clamp(norm_y, kNormEps, inf), {1, ny});
  return matmul(fx, transpose(fy)) / denom;
}

std::vector<std::size_t> top_n_indices(std::span<const double> scores, std::size_t n) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  n = std::min(n, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
                    });
  order.resize(n);
  return order;
}

std::size_t keep_count(std::size_t count, double ratio) {
  const auto n = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(count) + 1e-9));
  return std::max<std::size_t>(n, 1);
}

HoceModule::HoceModule(ParameterStore& store, const std::string& name, std::size_t channels,
                       const HoceConfig& config, Rng& rng)
    : config_(config) {
  if (config.quantiles < 2) throw std::invalid_argument("hoce: need at least 2 quantiles");
  if (config.hybrid()) {
    if (config.semantic) semantic_ = Mlp(store, name + ".semantic", {channels, 64, 1}, rng, config.norm);
    if (config.geometric && config.reduce == RowReduce::quantile_mlp) {
      row_ = Mlp(store, name + ".row", {config.quantiles, 16, 1}, rng, config.norm);
    }
  } else {
    basic_ = Mlp(store, name + ".basic", {2 * channels, 64, 1}, rng, config.norm);
  }
}

Tensor HoceModule::semantic_confidence(const Tensor& features) const {
  if (semantic_.layers.empty()) throw std::logic_error("hoce: semantic branch disabled");
  return sigmoid(semantic_.forward(features));
}

Tensor HoceModule::reduce_rows(const Tensor& rows) const {
  const std::size_t m = rows.shape()[0], n = rows.shape()[1];
  if (config_.reduce == RowReduce::mean) return mean(rows, 1);

  // Resample each descending-sorted row at fixed quantile positions so the
  // reduction is independent of the other cloud's size and point order.
  const std::size_t q = config_.quantiles;
  std::vector<std::size_t> lo(m * q), hi(m * q);
  std::vector<double> w_hi(q);
  std::vector<std::size_t> order(n);
  const auto v = rows.data();
  for (std::size_t k = 0; k < q; ++k) {
    const double pos = n > 1 ? static_cast<double>(k) * static_cast<double>(n - 1) / static_cast<double>(q - 1) : 0.0;
    w_hi[k] = pos - std::floor(pos);
  }
  for (std::size_t r = 0; r < m; ++r) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return v[r * n + a] > v[r * n + b]; });
    for (std::size_t k = 0; k < q; ++k) {
      const double pos = n > 1 ? static_cast<double>(k) * static_cast<double>(n - 1) / static_cast<double>(q - 1) : 0.0;
      const auto l = static_cast<std::size_t>(std::floor(pos));
      lo[r * q + k] = order[l];
      hi[r * q + k] = order[std::min(l + 1, n - 1)];
    }
  }
  std::vector<double> w_lo(q);
  for (std::size_t k = 0; k < q; ++k) w_lo[k] = 1.0 - w_hi[k];
  Tensor quant = gather_last(rows, {m, q}, lo) * Tensor::from({q}, w_lo) +
                 gather_last(rows, {m, q}, hi) * Tensor::from({q}, w_hi);
  return reshape(row_.forward(quant), {m});
}

OverlapScores HoceModule::hybrid_fuse_and_mask(const Tensor& similarity, const Tensor& semantic,
                                               std::size_t n_keep) const {
  OverlapScores s;
  s.similarity = similarity;
  s.semantic = semantic;
  const std::size_t m = similarity.shape()[0];
  if (semantic.defined() && semantic.shape() != Shape{m, 1}) {
    throw ShapeError("hoce fusion: semantic scores " + shape_str(semantic.shape()) +
                     " do not match similarity " + shape_str(similarity.shape()));
  }
  Tensor fused_rows = semantic.defined() ? similarity * semantic : similarity;
  s.fused = sigmoid(reduce_rows(fused_rows));
  finish_mask(s, n_keep);
  return s;
}

OverlapScores HoceModule::basic_scores(const Tensor& f, const Tensor& other, std::size_t n_keep) const {
  const std::size_t m = f.shape()[0];
  Tensor global = broadcast_to(max(other, 0, true).values, {m, other.shape()[1]});
  OverlapScores s;
  s.fused = sigmoid(reshape(basic_.forward(concat({f, global}, 1)), {m}));
  finish_mask(s, n_keep);
  return s;
}

std::pair<OverlapScores, OverlapScores> HoceModule::forward(const Tensor& fx, const Tensor& fy,
                                                            std::size_t n_keep) const {
  if (!config_.hybrid()) return {basic_scores(fx, fy, n_keep), basic_scores(fy, fx, n_keep)};

  Tensor sx, sy;
  if (config_.semantic) {
    sx = semantic_confidence(fx);
    sy = semantic_confidence(fy);
  }
  if (!config_.geometric) {
    OverlapScores a, b;
    a.semantic = sx;
    b.semantic = sy;
    a.fused = reshape(sx, {fx.shape()[0]});
    b.fused = reshape(sy, {fy.shape()[0]});
    finish_mask(a, n_keep);
    finish_mask(b, n_keep);
    return {std::move(a), std::move(b)};
  }
  Tensor sim = cosine_similarity_matrix(fx, fy);
  return {hybrid_fuse_and_mask(sim, sx, n_keep), hybrid_fuse_and_mask(transpose(sim), sy, n_keep)};
}

OverlapSubset extract_overlap(const Tensor& points, const Tensor& features, const OverlapScores& scores) {
  if (points.shape()[0] != features.shape()[0] || points.shape()[0] != scores.mask.size()) {
    throw ShapeError("extract_overlap: points " + shape_str(points.shape()) + " and features " +
                     shape_str(features.shape()) + " disagree with the mask size");
  }
  return {gather_rows(points, scores.subset), gather_rows(features, scores.subset)};
}

}  // namespace cegc
