#pragma once

#include <string>

#include "cegc/nn.hpp"

namespace cegc {

struct CamsConfig {
  std::size_t embed_dim = 32;    // width of the pairwise embeddings
  std::size_t context_dim = 32;  // width of the per-pair context code
  std::size_t mod_hidden = 16;
  std::size_t score_hidden = 16;
  NormMode norm = NormMode::none;

  bool operator==(const CamsConfig&) const = default;
};

struct PairwiseDescriptors {
  Tensor spatial;    // F'_S  [N, N, C5]
  Tensor geometric;  // F'_G  [N, N, C5]
  Tensor embedded;   // F'_H  [N, N, C5]
};

struct ConfidenceMap {
  Tensor scores;      // [N, N]
  Tensor modulation;  // gamma [N, N, 1], in (0, 1)
  Tensor summary;     // m [C6]
  Tensor modulated;   // gamma * F'_H [N, N, C5]
};

/// First layer of an MLP applied to every pair descriptor [a_i, b_j, |a_i - b_j|]
/// without materializing the N x N x (2c + 1) tensor. `layer` has in_features 2c + 1.
Tensor pairwise_linear(const Linear& layer, const Tensor& a, const Tensor& b);

/// Explicit N x N x (2c + 1) descriptor tensor [a_i, b_j, |a_i - b_j|].
Tensor pair_descriptor(const Tensor& a, const Tensor& b);

/// MLP over pair descriptors: pairwise_linear for the first layer, then the
/// usual activation and remaining layers on [N, N, H].
Tensor pairwise_mlp(const Mlp& mlp, const Tensor& a, const Tensor& b);

class CamsModule {
 public:
  CamsModule() = default;
  CamsModule(ParameterStore& store, const std::string& name, std::size_t feature_dim,
             const CamsConfig& config, Rng& rng);

  PairwiseDescriptors build_pairwise(const Tensor& ox, const Tensor& oy, const Tensor& fx,
                                     const Tensor& fy) const;
  ConfidenceMap cfm_modulate(const Tensor& ox, const Tensor& oy, const Tensor& embedded) const;

  const CamsConfig& config() const { return config_; }
  Mlp& spatial_mlp() { return spatial_; }
  Mlp& geometric_mlp() { return geometric_; }
  Mlp& fusion_mlp() { return fusion_; }
  Mlp& context_mlp() { return context_; }
  Mlp& modulation_mlp() { return modulation_; }
  Mlp& score_mlp() { return score_; }

 private:
  CamsConfig config_;
  Mlp spatial_, geometric_, fusion_, context_, modulation_, score_;
};

}  // namespace cegc
