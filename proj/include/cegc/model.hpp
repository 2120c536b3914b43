#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cegc/agnn.hpp"
#include "cegc/attention.hpp"
#include "cegc/cams.hpp"
#include "cegc/data.hpp"
#include "cegc/hoce.hpp"
#include "cegc/losses.hpp"
#include "cegc/solver.hpp"

namespace cegc {

struct ModelConfig {
  AgnnConfig agnn;
  ContextConfig context;
  HoceConfig hoce;
  CamsConfig cams;
  bool use_cams = true;
  NormMode norm = NormMode::per_cloud;
  double match_temperature = 0.1;
  std::uint64_t init_seed = 0;

  /// Flat numeric view used by checkpoints.
  std::map<std::string, double> to_values() const;
  static ModelConfig from_values(const std::map<std::string, double>& values);
  bool operator==(const ModelConfig&) const = default;
};

/// Applies one ablation name (no-hoce, no-cams, no-semantic, no-geometric).
void apply_ablation(ModelConfig& config, const std::string& name);

struct ForwardResult {
  Tensor features_x, features_y;  // after context enhancement
  OverlapScores overlap_x, overlap_y;
  Tensor subset_x, subset_y;      // [N, 3] coordinates of the kept points
  Tensor scores;                  // [N, N]
  ConfidenceMap confidence;       // empty unless CAMS is on
  Tensor weights;                 // [N]
  std::vector<std::size_t> matches;  // column of subset_y per subset_x row
  Tensor matched;                 // [N, 3] target coordinates of the matches
  TensorPose pose;                // empty unless requested
};

class Model {
 public:
  explicit Model(const ModelConfig& config);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  /// Full differentiable pass. With `solve` the tensor pose is computed.
  /// Throws NonFiniteError naming the first stage producing NaN/Inf.
  ForwardResult forward(const PointCloud& source, const PointCloud& target, bool solve = true) const;

  /// Gradient-free registration with the double-precision solver.
  PoseSolution register_pair(const PointCloud& source, const PointCloud& target) const;

  /// Losses for one pair; the returned tensor is the differentiable total.
  Tensor loss(const RegistrationPair& pair, double lambda, LossBreakdown* breakdown = nullptr) const;

  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  const ModelConfig& config() const { return config_; }

  AgnnExtractor& agnn() { return agnn_; }
  ContextEnhancer& context() { return context_; }
  HoceModule& hoce() { return hoce_; }
  CamsModule& cams() { return cams_; }
  ConfidenceWeightHead& weight_head() { return weights_; }

 private:
  ModelConfig config_;
  ParameterStore store_;
  AgnnExtractor agnn_;
  ContextEnhancer context_;
  HoceModule hoce_;
  CamsModule cams_;
  ConfidenceWeightHead weights_;
};

}  // namespace cegc
