#include "cegc/attention.hpp"

#include <cmath>

namespace cegc {

AttentionBlock::AttentionBlock(ParameterStore& store, const std::string& name,
                               std::size_t channels, std::size_t key_dim, Rng& rng, NormMode norm)
    : key_dim_(key_dim) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
  wq_ = store.create(name + ".wq", {channels, key_dim}, bound, rng);
  wk_ = store.create(name + ".wk", {channels, key_dim}, bound, rng);
  wv_ = store.create(name + ".wv", {channels, key_dim}, bound, rng);
  fuse_ = Mlp(store, name + ".fuse", {channels + key_dim, key_dim, channels}, rng, norm);
}

AttentionBlock::Output AttentionBlock::forward(const Tensor& features, const Tensor& context,
                                               bool exclude_diagonal) const {
  if (features.rank() != 2 || context.rank() != 2 || features.shape()[1] != context.shape()[1]) {
    throw ShapeError("attention: features " + shape_str(features.shape()) + " and context " +
                     shape_str(context.shape()) + " must share channel width");
  }
  Tensor q = matmul(features, wq_);
  Tensor k = matmul(context, wk_);
  Tensor v = matmul(context, wv_);
  Tensor logits = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(key_dim_)));
  const std::size_t m = features.shape()[0];
  if (exclude_diagonal && m > 1 && m == context.shape()[0]) {
    Tensor mask = Tensor::zeros({m, m});
    for (std::size_t i = 0; i < m; ++i) mask.mutable_data()[i * m + i] = -1e30;
    logits = logits + mask;
  }
  Tensor attention = softmax(logits, 1);
  Tensor message = matmul(attention, v);
  return {features + fuse_.forward(concat({features, message}, 1)), attention};
}

void AttentionBlock::zero_output() {
  auto& last = fuse_.last();
  for (auto& w : last.weight.mutable_data()) w = 0.0;
  for (auto& b : last.bias.mutable_data()) b = 0.0;
}

AttentionBlock::Output self_attention(const Tensor& features, const AttentionBlock& block,
                                      bool exclude_self) {
  return block.forward(features, features, exclude_self);
}

AttentionBlock::Output cross_attention(const Tensor& features, const Tensor& context,
                                       const AttentionBlock& block) {
  return block.forward(features, context);
}

ContextEnhancer::ContextEnhancer(ParameterStore& store, const std::string& name,
                                 std::size_t channels, const ContextConfig& config, Rng& rng)
    : config_(config) {
  for (std::size_t r = 0; r < config.rounds; ++r) {
    const std::string base = name + ".round" + std::to_string(r + 1);
    Round round;
    round.self_x = AttentionBlock(store, base + ".self", channels, config.key_dim, rng, config.norm);
    round.cross_x = AttentionBlock(store, base + ".cross", channels, config.key_dim, rng, config.norm);
    if (config.share_xy) {
      round.self_y = round.self_x;
      round.cross_y = round.cross_x;
    } else {
      round.self_y = AttentionBlock(store, base + ".self_y", channels, config.key_dim, rng, config.norm);
      round.cross_y = AttentionBlock(store, base + ".cross_y", channels, config.key_dim, rng, config.norm);
    }
    rounds_.push_back(std::move(round));
  }
}

std::pair<Tensor, Tensor> ContextEnhancer::forward(const Tensor& fx, const Tensor& fy) const {
  Tensor x = fx, y = fy;
  for (const auto& round : rounds_) {
    x = self_attention(x, round.self_x, config_.exclude_self).features;
    y = self_attention(y, round.self_y, config_.exclude_self).features;
    Tensor x_next = cross_attention(x, y, round.cross_x).features;
    Tensor y_next = cross_attention(y, x, round.cross_y).features;
    x = std::move(x_next);
    y = std::move(y_next);
  }
  return {x, y};
}

}  // namespace cegc
