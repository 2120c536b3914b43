#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cegc/tensor.hpp"

namespace cegc {

/// Seeded generator with platform-independent uniform/normal draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform();  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();   // standard normal (Box-Muller)
  std::size_t index(std::size_t n);
  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

/// Rounds every element to the nearest 32-bit float. Parameters live on this
/// grid so checkpoints (32-bit) reproduce them exactly.
void quantize_to_float(std::span<double> values);

/// Thread-local switch between training and evaluation behaviour (affects
/// batch normalization only). Defaults to evaluation.
bool training_mode();

class TrainingScope {
 public:
  explicit TrainingScope(bool training = true);
  ~TrainingScope();
  TrainingScope(const TrainingScope&) = delete;
  TrainingScope& operator=(const TrainingScope&) = delete;

 private:
  bool previous_;
};

/// Normalization after hidden layers.
///   batch:     batch statistics while training, running statistics otherwise
///   per_cloud: statistics of the current input in both modes
enum class NormMode { none, batch, per_cloud };

/// Ordered, named collection of learnable tensors.
class ParameterStore {
 public:
  /// Creates a parameter initialised uniformly in [-bound, bound].
  Tensor create(const std::string& name, const Shape& shape, double bound, Rng& rng);
  Tensor create_constant(const std::string& name, const Shape& shape, double value);
  /// Running statistics of a normalization layer (saved with checkpoints).
  std::shared_ptr<BatchNormState> create_norm_state(const std::string& name);

  const std::vector<std::pair<std::string, Tensor>>& named() const { return params_; }
  const std::vector<std::pair<std::string, std::shared_ptr<BatchNormState>>>& norm_states() const {
    return norm_states_;
  }
  Tensor find(const std::string& name) const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::pair<std::string, std::shared_ptr<BatchNormState>>> norm_states_;
};

/// Per-channel normalization over all leading axes of x [..., C].
struct Norm {
  Tensor gamma;
  Tensor beta;
  std::shared_ptr<BatchNormState> state;
  NormMode mode = NormMode::none;

  Norm() = default;
  Norm(ParameterStore& store, const std::string& name, std::size_t channels, NormMode mode);

  bool enabled() const { return mode != NormMode::none; }
  Tensor forward(const Tensor& x) const;
};

/// y = x W + b with W [in, out]. Fan-in uniform init.
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
         Rng& rng);

  std::size_t in_features() const { return weight.shape()[0]; }
  std::size_t out_features() const { return weight.shape()[1]; }
  Tensor forward(const Tensor& x) const;
};

/// Stack of Linear layers with ReLU between them (none after the last). With
/// normalization on, every hidden layer is followed by Norm before the ReLU.
struct Mlp {
  std::vector<Linear> layers;
  std::vector<Norm> norms;  // one per hidden layer, empty when disabled

  Mlp() = default;
  Mlp(ParameterStore& store, const std::string& name, const std::vector<std::size_t>& widths,
      Rng& rng, NormMode norm = NormMode::none);

  Tensor forward(const Tensor& x) const;
  /// ReLU(Norm_i(h)) for hidden layer i.
  Tensor activate(const Tensor& h, std::size_t i) const;
  Linear& last() { return layers.back(); }
  const Linear& first() const { return layers.front(); }
};

/// Rows [begin, end) of a parameter, differentiable.
Tensor row_slice(const Tensor& t, std::size_t begin, std::size_t end);

}  // namespace cegc
