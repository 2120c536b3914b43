#include "cegc/agnn.hpp"

#include <cmath>
#include <stdexcept>

namespace cegc {

Tensor encode_neighborhood(const std::vector<Vec3>& points, const NeighborGraph& graph) {
  if (graph.points != points.size()) {
    throw std::invalid_argument("encode_neighborhood: graph built for " +
                                std::to_string(graph.points) + " points, cloud has " +
                                std::to_string(points.size()));
  }
  const std::size_t m = graph.points, k = graph.k;
  std::vector<double> h(m * k * 6);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      double* row = h.data() + (i * k + j) * 6;
      const Vec3& off = graph.offsets[i * k + j];
      for (int c = 0; c < 3; ++c) {
        row[c] = points[i][c];
        row[3 + c] = off[c];
      }
    }
  return Tensor::from({m, k, 6}, std::move(h));
}

AgnnLayer::AgnnLayer(ParameterStore& store, const std::string& name, std::size_t in_dim,
                     std::size_t width, bool slot_input, Rng& rng, NormMode norm)
    : slot_input_(slot_input),
      embed_(store, name + ".embed", in_dim, width, rng),
      embed_norm_(store, name + ".embed.norm", width, norm) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(width));
  wq_ = store.create(name + ".wq", {width, width}, bound, rng);
  wk_ = store.create(name + ".wk", {width, width}, bound, rng);
  wv_ = store.create(name + ".wv", {width, width}, bound, rng);
  update_ = Mlp(store, name + ".update", {width, width, width}, rng, norm);
}

AgnnLayer::Output AgnnLayer::forward(const Tensor& input, const NeighborGraph& graph) const {
  const std::size_t m = graph.points, k = graph.k, c = width();
  Tensor center, keys, values;
  if (slot_input_) {
    if (input.rank() != 3 || input.shape()[0] != m || input.shape()[1] != k) {
      throw ShapeError("agnn layer: slot input " + shape_str(input.shape()) + " does not match graph [" +
                       std::to_string(m) + ", " + std::to_string(k) + ", *]");
    }
    Tensor slots = relu(embed_norm_.forward(embed_.forward(input)));  // [M, K, C]
    center = max(slots, 1).values;
    keys = matmul(slots, wk_);
    values = matmul(slots, wv_);
  } else {
    if (input.rank() != 2 || input.shape()[0] != m) {
      throw ShapeError("agnn layer: point input " + shape_str(input.shape()) + " does not match " +
                       std::to_string(m) + " graph points");
    }
    center = relu(embed_norm_.forward(embed_.forward(input)));  // [M, C]
    keys = reshape(gather_rows(matmul(center, wk_), graph.indices), {m, k, c});
    values = reshape(gather_rows(matmul(center, wv_), graph.indices), {m, k, c});
  }
  Tensor query = reshape(matmul(center, wq_), {m, 1, c});
  Tensor logits = scale(sum(query * keys, 2), 1.0 / std::sqrt(static_cast<double>(c)));
  Tensor attention = softmax(logits, 1);  // [M, K]
  Tensor message = sum(reshape(attention, {m, k, 1}) * values, 1);
  return {update_.forward(message) + center, attention};
}

AgnnExtractor::AgnnExtractor(ParameterStore& store, const std::string& name,
                             const AgnnConfig& config, Rng& rng)
    : config_(config) {
  if (config.widths.empty()) throw std::invalid_argument("agnn: at least one layer width required");
  std::size_t in = 6;
  std::size_t total = 0;
  for (std::size_t l = 0; l < config.widths.size(); ++l) {
    layers_.emplace_back(store, name + ".layer" + std::to_string(l + 1), in, config.widths[l], l == 0, rng,
                         config.norm);
    in = config.widths[l];
    total += config.widths[l];
  }
  fuse_ = Linear(store, name + ".fuse", total, config.out_dim, rng);
}

Tensor AgnnExtractor::extract(const std::vector<Vec3>& points) const {
  return extract(points, knn_graph(points, config_.k));
}

Tensor AgnnExtractor::extract(const std::vector<Vec3>& points, const NeighborGraph& graph) const {
  Tensor h = encode_neighborhood(points, graph);
  std::vector<Tensor> per_layer;
  for (const auto& layer : layers_) {
    h = layer.forward(h, graph).features;
    per_layer.push_back(h);
  }
  return fuse_.forward(concat(per_layer, 1));
}

}  // namespace cegc
