#include "cegc/cams.hpp"

#include <stdexcept>

namespace cegc {

namespace {
void check_pair_inputs(const char* what, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1]) {
    throw ShapeError(std::string(what) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " are not compatible");
  }
}
}  // namespace

Tensor pairwise_linear(const Linear& layer, const Tensor& a, const Tensor& b) {
  check_pair_inputs("pairwise_linear", a, b);
  const std::size_t c = a.shape()[1], n = a.shape()[0], m = b.shape()[0];
  const std::size_t h = layer.out_features();
  if (layer.in_features() != 2 * c + 1) {
    throw ShapeError("pairwise_linear: layer expects " + std::to_string(layer.in_features()) +
                     " inputs, descriptor has " + std::to_string(2 * c + 1));
  }
  Tensor left = reshape(matmul(a, row_slice(layer.weight, 0, c)), {n, 1, h});
  Tensor right = reshape(matmul(b, row_slice(layer.weight, c, 2 * c)), {1, m, h});
  Tensor dist = reshape(pairwise_distance(a, b), {n, m, 1});
  Tensor w_dist = reshape(row_slice(layer.weight, 2 * c, 2 * c + 1), {1, 1, h});
  return left + right + dist * w_dist + reshape(layer.bias, {1, 1, h});
}

Tensor pair_descriptor(const Tensor& a, const Tensor& b) {
  check_pair_inputs("pair_descriptor", a, b);
  const std::size_t c = a.shape()[1], n = a.shape()[0], m = b.shape()[0];
  Tensor left = broadcast_to(reshape(a, {n, 1, c}), {n, m, c});
  Tensor right = broadcast_to(reshape(b, {1, m, c}), {n, m, c});
  Tensor dist = reshape(pairwise_distance(a, b), {n, m, 1});
  return concat({left, right, dist}, 2);
}

Tensor pairwise_mlp(const Mlp& mlp, const Tensor& a, const Tensor& b) {
  Tensor h = pairwise_linear(mlp.layers.front(), a, b);
  for (std::size_t l = 1; l < mlp.layers.size(); ++l) h = mlp.layers[l].forward(mlp.activate(h, l - 1));
  return h;
}

CamsModule::CamsModule(ParameterStore& store, const std::string& name, std::size_t feature_dim,
                       const CamsConfig& config, Rng& rng)
    : config_(config) {
  const std::size_t c5 = config.embed_dim, c6 = config.context_dim;
  const NormMode norm = config.norm;
  spatial_ = Mlp(store, name + ".spatial", {7, c5, c5}, rng, norm);
  geometric_ = Mlp(store, name + ".geometric", {2 * feature_dim + 1, c5, c5}, rng, norm);
  fusion_ = Mlp(store, name + ".fusion", {c5, c5, c5}, rng, norm);
  context_ = Mlp(store, name + ".context", {7, c6, c6}, rng, norm);
  modulation_ = Mlp(store, name + ".modulation", {2 * c6, config.mod_hidden, 1}, rng, norm);
  score_ = Mlp(store, name + ".score", {c5, config.score_hidden, 1}, rng, norm);
}

PairwiseDescriptors CamsModule::build_pairwise(const Tensor& ox, const Tensor& oy,
                                               const Tensor& fx, const Tensor& fy) const {
  if (ox.shape()[0] != oy.shape()[0] || fx.shape()[0] != ox.shape()[0] ||
      fy.shape()[0] != oy.shape()[0]) {
    throw ShapeError("build_pairwise: subset sizes differ (points " + shape_str(ox.shape()) + " / " +
                     shape_str(oy.shape()) + ", features " + shape_str(fx.shape()) + " / " +
                     shape_str(fy.shape()) + ")");
  }
  PairwiseDescriptors d;
  d.spatial = pairwise_mlp(spatial_, ox, oy);
  d.geometric = pairwise_mlp(geometric_, fx, fy);
  d.embedded = fusion_.forward(d.spatial * d.geometric);
  return d;
}

ConfidenceMap CamsModule::cfm_modulate(const Tensor& ox, const Tensor& oy, const Tensor& embedded) const {
  const std::size_t n = ox.shape()[0], m = oy.shape()[0], c6 = config_.context_dim;
  if (embedded.rank() != 3 || embedded.shape()[0] != n || embedded.shape()[1] != m) {
    throw ShapeError("cfm_modulate: embedded " + shape_str(embedded.shape()) +
                     " does not match subsets of " + std::to_string(n) + " and " + std::to_string(m));
  }
  ConfidenceMap out;
  Tensor code = pairwise_mlp(context_, ox, oy);  // [N, N, C6]
  out.summary = mean(reshape(code, {n * m, c6}), 0);

  // The summary enters the first modulation layer through its own weight rows.
  const Linear& first = modulation_.layers.front();
  Tensor per_pair = matmul(code, row_slice(first.weight, 0, c6));
  Tensor global = matmul(reshape(out.summary, {1, c6}), row_slice(first.weight, c6, 2 * c6));
  Tensor h = per_pair + reshape(global, {1, 1, first.out_features()}) +
             reshape(first.bias, {1, 1, first.out_features()});
  for (std::size_t l = 1; l < modulation_.layers.size(); ++l) {
    h = modulation_.layers[l].forward(modulation_.activate(h, l - 1));
  }
  out.modulation = sigmoid(h);
  out.modulated = out.modulation * embedded;
  out.scores = reshape(score_.forward(out.modulated), {n, m});
  return out;
}

}  // namespace cegc
