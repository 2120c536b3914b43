#pragma once

#include <string>
#include <vector>

#include "cegc/knn.hpp"
#include "cegc/nn.hpp"

namespace cegc {

struct AgnnConfig {
  std::size_t k = 12;
  std::vector<std::size_t> widths{64, 64, 128};
  std::size_t out_dim = 256;
  NormMode norm = NormMode::none;

  bool operator==(const AgnnConfig&) const = default;
};

/// [M, K, 6]: row (i, j) = [x_i, x_i - x_neighbour(i, j)].
Tensor encode_neighborhood(const std::vector<Vec3>& points, const NeighborGraph& graph);

/// One attention-aggregation layer over the fixed neighbour graph.
///
/// The first layer embeds every neighbourhood slot of H and uses the max over
/// slots as the centre feature. Later layers embed per-point features and
/// gather neighbour keys/values through the graph. In both cases
///   f_i = mlp(sum_j a_ij v_ij) + centre_i,  a_i = softmax(q_i k_i^T / sqrt(d)).
class AgnnLayer {
 public:
  AgnnLayer() = default;
  AgnnLayer(ParameterStore& store, const std::string& name, std::size_t in_dim,
            std::size_t width, bool slot_input, Rng& rng, NormMode norm = NormMode::none);

  struct Output {
    Tensor features;   // [M, width]
    Tensor attention;  // [M, K]
  };
  /// `input` is [M, K, in_dim] for the slot-input layer, else [M, in_dim].
  Output forward(const Tensor& input, const NeighborGraph& graph) const;

  std::size_t width() const { return embed_.out_features(); }

 private:
  bool slot_input_ = false;
  Linear embed_;
  Norm embed_norm_;
  Tensor wq_, wk_, wv_;
  Mlp update_;
};

class AgnnExtractor {
 public:
  AgnnExtractor() = default;
  AgnnExtractor(ParameterStore& store, const std::string& name, const AgnnConfig& config, Rng& rng);

  /// [M, out_dim] descriptors; the same weights serve source and target.
  Tensor extract(const std::vector<Vec3>& points) const;
  Tensor extract(const std::vector<Vec3>& points, const NeighborGraph& graph) const;

  const AgnnConfig& config() const { return config_; }
  const std::vector<AgnnLayer>& layers() const { return layers_; }

 private:
  AgnnConfig config_;
  std::vector<AgnnLayer> layers_;
  Linear fuse_;
};

}  // namespace cegc
