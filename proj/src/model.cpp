#include "cegc/model.hpp"

#include <cmath>
#include <stdexcept>

#include "cegc/optim.hpp"

namespace cegc {

namespace {

void require_finite(const Tensor& t, const char* stage) {
  if (!t.defined()) return;
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw NonFiniteError(std::string("non-finite values produced by ") + stage);
  }
}

std::vector<Vec3> rows_to_points(const Tensor& t) {
  const auto v = t.data();
  std::vector<Vec3> out(t.shape()[0]);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = Vec3(v[i * 3], v[i * 3 + 1], v[i * 3 + 2]);
  return out;
}

std::vector<Vec3> centered(const PointCloud& cloud) {
  const Vec3 c = cloud.centroid();
  std::vector<Vec3> out(cloud.points);
  for (auto& p : out) p -= c;
  return out;
}

double get(const std::map<std::string, double>& values, const std::string& key, double fallback) {
  auto it = values.find(key);
  return it == values.end() ? fallback : it->second;
}

}  // namespace

std::map<std::string, double> ModelConfig::to_values() const {
  std::map<std::string, double> v;
  v["agnn.k"] = static_cast<double>(agnn.k);
  v["agnn.layers"] = static_cast<double>(agnn.widths.size());
  for (std::size_t i = 0; i < agnn.widths.size(); ++i) v["agnn.width" + std::to_string(i)] = static_cast<double>(agnn.widths[i]);
  v["agnn.out_dim"] = static_cast<double>(agnn.out_dim);
  v["context.rounds"] = static_cast<double>(context.rounds);
  v["context.key_dim"] = static_cast<double>(context.key_dim);
  v["context.share_xy"] = context.share_xy;
  v["context.exclude_self"] = context.exclude_self;
  v["hoce.semantic"] = hoce.semantic;
  v["hoce.geometric"] = hoce.geometric;
  v["hoce.keep_ratio"] = hoce.keep_ratio;
  v["hoce.quantiles"] = static_cast<double>(hoce.quantiles);
  v["hoce.reduce_mean"] = hoce.reduce == RowReduce::mean;
  v["cams.embed_dim"] = static_cast<double>(cams.embed_dim);
  v["cams.context_dim"] = static_cast<double>(cams.context_dim);
  v["cams.mod_hidden"] = static_cast<double>(cams.mod_hidden);
  v["cams.score_hidden"] = static_cast<double>(cams.score_hidden);
  v["use_cams"] = use_cams;
  v["norm"] = static_cast<double>(norm);
  v["match_temperature"] = match_temperature;
  v["init_seed_hi"] = static_cast<double>(init_seed >> 32);
  v["init_seed_lo"] = static_cast<double>(init_seed & 0xffffffffULL);
  return v;
}

ModelConfig ModelConfig::from_values(const std::map<std::string, double>& v) {
  ModelConfig c;
  auto count = [&](const std::string& key, std::size_t fallback) {
    const double x = get(v, key, static_cast<double>(fallback));
    if (!(x >= 0.0) || x != std::floor(x)) throw std::invalid_argument("model config: bad value for " + key);
    return static_cast<std::size_t>(x);
  };
  c.agnn.k = count("agnn.k", c.agnn.k);
  if (v.count("agnn.layers")) {
    c.agnn.widths.assign(count("agnn.layers", 0), 0);
    for (std::size_t i = 0; i < c.agnn.widths.size(); ++i) c.agnn.widths[i] = count("agnn.width" + std::to_string(i), 0);
  }
  c.agnn.out_dim = count("agnn.out_dim", c.agnn.out_dim);
  c.context.rounds = count("context.rounds", c.context.rounds);
  c.context.key_dim = count("context.key_dim", c.context.key_dim);
  c.context.share_xy = get(v, "context.share_xy", c.context.share_xy) != 0.0;
  c.context.exclude_self = get(v, "context.exclude_self", c.context.exclude_self) != 0.0;
  c.hoce.semantic = get(v, "hoce.semantic", c.hoce.semantic) != 0.0;
  c.hoce.geometric = get(v, "hoce.geometric", c.hoce.geometric) != 0.0;
  c.hoce.keep_ratio = get(v, "hoce.keep_ratio", c.hoce.keep_ratio);
  c.hoce.quantiles = count("hoce.quantiles", c.hoce.quantiles);
  c.hoce.reduce = get(v, "hoce.reduce_mean", 0.0) != 0.0 ? RowReduce::mean : RowReduce::quantile_mlp;
  c.cams.embed_dim = count("cams.embed_dim", c.cams.embed_dim);
  c.cams.context_dim = count("cams.context_dim", c.cams.context_dim);
  c.cams.mod_hidden = count("cams.mod_hidden", c.cams.mod_hidden);
  c.cams.score_hidden = count("cams.score_hidden", c.cams.score_hidden);
  c.use_cams = get(v, "use_cams", c.use_cams) != 0.0;
  const std::size_t norm = count("norm", static_cast<std::size_t>(c.norm));
  if (norm > 2) throw std::invalid_argument("model config: bad value for norm");
  c.norm = static_cast<NormMode>(norm);
  c.match_temperature = get(v, "match_temperature", c.match_temperature);
  c.init_seed = (static_cast<std::uint64_t>(count("init_seed_hi", 0)) << 32) | count("init_seed_lo", 0);
  return c;
}

void apply_ablation(ModelConfig& config, const std::string& name) {
  if (name == "no-hoce") {
    config.hoce.semantic = false;
    config.hoce.geometric = false;
  } else if (name == "no-cams") {
    config.use_cams = false;
  } else if (name == "no-semantic") {
    config.hoce.semantic = false;
  } else if (name == "no-geometric") {
    config.hoce.geometric = false;
  } else {
    throw std::invalid_argument("unknown ablation '" + name +
                                "' (expected no-hoce, no-cams, no-semantic or no-geometric)");
  }
}

Model::Model(const ModelConfig& config) : config_(config) {
  config_.agnn.norm = config_.context.norm = config_.hoce.norm = config_.cams.norm = config.norm;
  if (!(config.match_temperature > 0.0)) throw std::invalid_argument("model: match temperature must be positive");
  if (!(config.hoce.keep_ratio > 0.0 && config.hoce.keep_ratio <= 1.0)) {
    throw std::invalid_argument("model: keep ratio must lie in (0, 1]");
  }
  Rng rng(derive_seed(config.init_seed, 0x5eed));
  agnn_ = AgnnExtractor(store_, "agnn", config_.agnn, rng);
  context_ = ContextEnhancer(store_, "context", config.agnn.out_dim, config_.context, rng);
  hoce_ = HoceModule(store_, "hoce", config.agnn.out_dim, config_.hoce, rng);
  if (config.use_cams) {
    cams_ = CamsModule(store_, "cams", config.agnn.out_dim, config_.cams, rng);
    weights_ = ConfidenceWeightHead(store_, "weights", config.cams.embed_dim, rng);
  }
}

ForwardResult Model::forward(const PointCloud& source, const PointCloud& target, bool solve) const {
  source.validate();
  target.validate();
  ForwardResult r;
  Tensor fx = agnn_.extract(centered(source));
  Tensor fy = agnn_.extract(centered(target));
  require_finite(fx, "feature extraction");
  require_finite(fy, "feature extraction");
  std::tie(r.features_x, r.features_y) = context_.forward(fx, fy);
  require_finite(r.features_x, "context attention");
  require_finite(r.features_y, "context attention");

  const std::size_t n_keep = keep_count(std::min(source.size(), target.size()), config_.hoce.keep_ratio);
  std::tie(r.overlap_x, r.overlap_y) = hoce_.forward(r.features_x, r.features_y, n_keep);
  require_finite(r.overlap_x.fused, "overlap estimation");
  require_finite(r.overlap_y.fused, "overlap estimation");

  const OverlapSubset sx = extract_overlap(to_tensor(source), r.features_x, r.overlap_x);
  const OverlapSubset sy = extract_overlap(to_tensor(target), r.features_y, r.overlap_y);
  r.subset_x = sx.points;
  r.subset_y = sy.points;
  if (config_.use_cams) {
    const PairwiseDescriptors desc = cams_.build_pairwise(sx.points, sy.points, sx.features, sy.features);
    r.confidence = cams_.cfm_modulate(sx.points, sy.points, desc.embedded);
    r.scores = r.confidence.scores;
    require_finite(r.scores, "context-aware matching");
    r.weights = weights_.forward(r.confidence.modulated);
  } else {
    r.scores = cosine_similarity_matrix(sx.features, sy.features);
    require_finite(r.scores, "feature matching");
    r.weights = Tensor::full({n_keep}, 1.0);
  }
  require_finite(r.weights, "confidence weighting");
  r.matches = select_correspondences(r.scores);
  r.matched = matched_points(r.scores, sy.points, config_.match_temperature);
  if (solve) {
    r.pose = weighted_kabsch_tensor(sx.points, r.matched, r.weights);
    require_finite(r.pose.rotation, "pose solver");
    require_finite(r.pose.translation, "pose solver");
  }
  return r;
}

PoseSolution Model::register_pair(const PointCloud& source, const PointCloud& target) const {
  NoGradGuard guard;
  const ForwardResult r = forward(source, target, false);
  const auto src = rows_to_points(r.subset_x);
  const auto tgt = rows_to_points(r.matched);
  const auto w = r.weights.data();
  return weighted_kabsch(src, tgt, std::vector<double>(w.begin(), w.end()));
}

Tensor Model::loss(const RegistrationPair& pair, double lambda, LossBreakdown* breakdown) const {
  check_lambda(lambda);
  const ForwardResult r = forward(pair.source, pair.target, true);
  Tensor l1 = overlap_bce(r.overlap_x.fused, pair.gt_mask_src, 2.0 * static_cast<double>(pair.source.size()));
  Tensor l2 = overlap_bce(r.overlap_y.fused, pair.gt_mask_tgt, 2.0 * static_cast<double>(pair.target.size()));
  Tensor lo = l1 + l2;
  Tensor lr = pose_loss(r.pose.rotation, r.pose.translation, pair.gt);
  Tensor total = total_loss(lo, lr, lambda);
  require_finite(l1, "overlap loss");
  require_finite(l2, "overlap loss");
  require_finite(lr, "pose loss");
  if (breakdown) {
    breakdown->l1 = l1.item();
    breakdown->l2 = l2.item();
    breakdown->lo = lo.item();
    breakdown->lr = lr.item();
    breakdown->total = total.item();
    breakdown->lambda = lambda;
  }
  return total;
}

}  // namespace cegc
