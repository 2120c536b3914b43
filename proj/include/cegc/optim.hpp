#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "cegc/nn.hpp"

namespace cegc {

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers are keyed by parameter position in
/// the store, so the store must not grow between steps.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// Applies one update to every parameter. Parameters without an accumulated
  /// gradient are treated as having a zero gradient. Throws NonFiniteError
  /// naming the first parameter whose gradient is NaN or infinite; nothing is
  /// modified in that case.
  void step(ParameterStore& params);

  long steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace cegc
