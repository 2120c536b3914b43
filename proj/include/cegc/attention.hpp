#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cegc/nn.hpp"

namespace cegc {

struct ContextConfig {
  std::size_t rounds = 2;
  std::size_t key_dim = 64;
  bool share_xy = true;      // X and Y use the same block weights
  bool exclude_self = false; // self-attention skips the diagonal
  NormMode norm = NormMode::none;

  bool operator==(const ContextConfig&) const = default;
};

/// Residual attention update f <- f + fuse([f, sum_j e_ij v_j]) with queries
/// from `features` and keys/values from `context`.
class AttentionBlock {
 public:
  AttentionBlock() = default;
  AttentionBlock(ParameterStore& store, const std::string& name, std::size_t channels,
                 std::size_t key_dim, Rng& rng, NormMode norm = NormMode::none);

  struct Output {
    Tensor features;   // same shape as the query features
    Tensor attention;  // [M, M_context], rows sum to 1
  };
  Output forward(const Tensor& features, const Tensor& context, bool exclude_diagonal = false) const;

  /// Zeroes the last fusion layer so the block reduces to the identity.
  void zero_output();

 private:
  Tensor wq_, wk_, wv_;
  Mlp fuse_;
  std::size_t key_dim_ = 0;
};

AttentionBlock::Output self_attention(const Tensor& features, const AttentionBlock& block,
                                      bool exclude_self = false);
AttentionBlock::Output cross_attention(const Tensor& features, const Tensor& context,
                                       const AttentionBlock& block);

/// Interleaved rounds of self(X), self(Y), then the two cross updates. Both
/// cross updates read the post-self features, so swapping X and Y swaps the
/// outputs.
class ContextEnhancer {
 public:
  ContextEnhancer() = default;
  ContextEnhancer(ParameterStore& store, const std::string& name, std::size_t channels,
                  const ContextConfig& config, Rng& rng);

  std::pair<Tensor, Tensor> forward(const Tensor& fx, const Tensor& fy) const;

  struct Round {
    AttentionBlock self_x, self_y, cross_x, cross_y;
  };
  const std::vector<Round>& rounds() const { return rounds_; }
  std::vector<Round>& rounds() { return rounds_; }
  const ContextConfig& config() const { return config_; }

 private:
  ContextConfig config_;
  std::vector<Round> rounds_;
};

}  // namespace cegc
