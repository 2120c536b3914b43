#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cegc/nn.hpp"

namespace cegc {

/// How the fused similarity row of a point is reduced to one logit.
enum class RowReduce {
  quantile_mlp,  // sort row descending, resample to fixed quantiles, small MLP
  mean,          // plain row mean (no parameters)
};

struct HoceConfig {
  bool semantic = true;
  bool geometric = true;
  double keep_ratio = 0.5;
  std::size_t quantiles = 16;
  RowReduce reduce = RowReduce::quantile_mlp;
  NormMode norm = NormMode::none;
  /// With both branches off a per-point predictor on [f_i, maxpool(F_other)]
  /// replaces the hybrid estimator.
  bool hybrid() const { return semantic || geometric; }
  bool operator==(const HoceConfig&) const = default;
};

struct OverlapScores {
  Tensor semantic;    // [M, 1]; undefined when the semantic branch is off
  Tensor similarity;  // [M, M_other]; undefined when the geometric branch is off
  Tensor fused;       // [M] in (0, 1)
  std::vector<bool> mask;
  std::vector<std::size_t> subset;  // kept indices, by descending fused score
};

/// Cosine similarity between every row of fx [Nx, C] and fy [Ny, C]. Rows with
/// zero norm produce similarity 0; `zero_rows` (optional) reports whether any
/// were seen.
Tensor cosine_similarity_matrix(const Tensor& fx, const Tensor& fy, bool* zero_rows = nullptr);

/// Indices of the n largest scores, by descending score, ties to lower index.
std::vector<std::size_t> top_n_indices(std::span<const double> scores, std::size_t n);

/// floor(ratio * count), at least 1.
std::size_t keep_count(std::size_t count, double ratio);

class HoceModule {
 public:
  HoceModule() = default;
  HoceModule(ParameterStore& store, const std::string& name, std::size_t channels,
             const HoceConfig& config, Rng& rng);

  /// Per-point semantic confidence sigma(f(F)), [M, 1].
  Tensor semantic_confidence(const Tensor& features) const;

  /// Fuses similarity rows with the semantic scores, reduces each row to a
  /// confidence and masks the top n_keep points.
  OverlapScores hybrid_fuse_and_mask(const Tensor& similarity, const Tensor& semantic,
                                     std::size_t n_keep) const;

  /// Scores for both clouds under the configured branches.
  std::pair<OverlapScores, OverlapScores> forward(const Tensor& fx, const Tensor& fy,
                                                  std::size_t n_keep) const;

  const HoceConfig& config() const { return config_; }
  Mlp& semantic_mlp() { return semantic_; }

 private:
  Tensor reduce_rows(const Tensor& fused_rows) const;
  OverlapScores basic_scores(const Tensor& f, const Tensor& other, std::size_t n_keep) const;

  HoceConfig config_;
  Mlp semantic_;
  Mlp row_;
  Mlp basic_;
};

struct OverlapSubset {
  Tensor points;    // [N, 3]
  Tensor features;  // [N, C]
};

/// Gathers the masked rows in subset order.
OverlapSubset extract_overlap(const Tensor& points, const Tensor& features, const OverlapScores& scores);

}  // namespace cegc
