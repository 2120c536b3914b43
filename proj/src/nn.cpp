#include "cegc/nn.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace cegc {

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("Rng::index: empty range");
  return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
}

void quantize_to_float(std::span<double> values) {
  for (auto& v : values) v = static_cast<double>(static_cast<float>(v));
}

Tensor ParameterStore::create(const std::string& name, const Shape& shape, double bound,
                              Rng& rng) {
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = rng.uniform(-bound, bound);
  quantize_to_float(values);
  Tensor t = Tensor::from(shape, std::move(values), true);
  params_.emplace_back(name, t);
  return t;
}

Tensor ParameterStore::create_constant(const std::string& name, const Shape& shape,
                                       double value) {
  Tensor t = Tensor::full(shape, static_cast<double>(static_cast<float>(value)), true);
  params_.emplace_back(name, t);
  return t;
}

std::shared_ptr<BatchNormState> ParameterStore::create_norm_state(const std::string& name) {
  auto state = std::make_shared<BatchNormState>();
  norm_states_.emplace_back(name, state);
  return state;
}

Tensor ParameterStore::find(const std::string& name) const {
  for (const auto& [n, t] : params_)
    if (n == name) return t;
  throw std::out_of_range("no parameter named '" + name + "'");
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

namespace {
thread_local bool t_training = false;
}

bool training_mode() { return t_training; }

TrainingScope::TrainingScope(bool training) : previous_(t_training) { t_training = training; }
TrainingScope::~TrainingScope() { t_training = previous_; }

Norm::Norm(ParameterStore& store, const std::string& name, std::size_t channels, NormMode mode)
    : mode(mode) {
  if (mode == NormMode::none) return;
  gamma = store.create_constant(name + ".gamma", {channels}, 1.0);
  beta = store.create_constant(name + ".beta", {channels}, 0.0);
  state = store.create_norm_state(name);
  state->running_mean.assign(channels, 0.0);
  state->running_var.assign(channels, 1.0);
}

Tensor Norm::forward(const Tensor& x) const {
  if (mode == NormMode::none) return x;
  const std::size_t ch = gamma.numel();
  if (x.rank() < 1 || x.shape().back() != ch) {
    throw ShapeError("norm: input " + shape_str(x.shape()) + " does not end in " + std::to_string(ch) + " channels");
  }
  const Tensor flat = reshape(x, {x.numel() / ch, ch});
  Tensor y;
  if (mode == NormMode::per_cloud) {
    BatchNormState scratch;
    y = batch_norm(flat, gamma, beta, scratch, true);
  } else if (training_mode()) {
    y = batch_norm(flat, gamma, beta, *state, true);
    quantize_to_float(state->running_mean);
    quantize_to_float(state->running_var);
  } else {
    y = batch_norm(flat, gamma, beta, *state, false);
  }
  return reshape(y, x.shape());
}

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in,
               std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = store.create(name + ".weight", {in, out}, bound, rng);
  bias = store.create(name + ".bias", {out}, bound, rng);
}

Tensor Linear::forward(const Tensor& x) const { return matmul(x, weight) + bias; }

Mlp::Mlp(ParameterStore& store, const std::string& name,
         const std::vector<std::size_t>& widths, Rng& rng, NormMode norm) {
  if (widths.size() < 2) throw std::invalid_argument("Mlp needs at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    layers.emplace_back(store, name + "." + std::to_string(i), widths[i], widths[i + 1], rng);
    if (norm != NormMode::none && i + 2 < widths.size()) {
      norms.emplace_back(store, name + "." + std::to_string(i) + ".norm", widths[i + 1], norm);
    }
  }
}

Tensor Mlp::activate(const Tensor& h, std::size_t i) const {
  return relu(i < norms.size() ? norms[i].forward(h) : h);
}

Tensor Mlp::forward(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i].forward(h);
    if (i + 1 < layers.size()) h = activate(h, i);
  }
  return h;
}

Tensor row_slice(const Tensor& t, std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return gather_rows(t, idx);
}

}  // namespace cegc
