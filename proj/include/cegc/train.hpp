#pragma once

#include <functional>
#include <ostream>
#include <vector>

#include "cegc/model.hpp"
#include "cegc/optim.hpp"

namespace cegc {

struct TrainConfig {
  std::size_t epochs = 50;
  double lr = 1e-3;
  double lambda = 0.5;
};

/// Mean losses over the pairs of one epoch.
struct EpochLog {
  std::size_t epoch = 0;
  LossBreakdown loss;
};

/// Header and row format of the per-epoch CSV log.
void write_epoch_header(std::ostream& out);
void write_epoch_row(std::ostream& out, const EpochLog& log);

/// One Adam step per pair, pairs visited in order each epoch. Throws
/// NonFiniteError (from the model or optimizer) on NaN/Inf. `on_epoch` runs
/// after every epoch.
std::vector<EpochLog> train(Model& model, const std::vector<RegistrationPair>& pairs,
                            const TrainConfig& config,
                            const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace cegc
