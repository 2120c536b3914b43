#include "cegc/train.hpp"

#include <stdexcept>

#include "cegc/io.hpp"

namespace cegc {

void write_epoch_header(std::ostream& out) { out << "epoch,l1,l2,lo,lr_loss,total\n"; }

void write_epoch_row(std::ostream& out, const EpochLog& log) {
  const auto& l = log.loss;
  out << log.epoch << ',' << format_double(l.l1) << ',' << format_double(l.l2) << ',' << format_double(l.lo)
      << ',' << format_double(l.lr) << ',' << format_double(l.total) << '\n';
}

std::vector<EpochLog> train(Model& model, const std::vector<RegistrationPair>& pairs,
                            const TrainConfig& config, const std::function<void(const EpochLog&)>& on_epoch) {
  if (pairs.empty()) throw std::invalid_argument("train: no training pairs");
  check_lambda(config.lambda);
  if (!(config.lr > 0.0)) throw std::invalid_argument("train: learning rate must be positive");
  AdamConfig adam_config;
  adam_config.lr = config.lr;
  Adam adam(adam_config);
  std::vector<EpochLog> history;
  TrainingScope training;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch;
    log.loss.lambda = config.lambda;
    for (const auto& pair : pairs) {
      LossBreakdown b;
      model.parameters().zero_grad();
      Tensor total = model.loss(pair, config.lambda, &b);
      backward(total);
      adam.step(model.parameters());
      log.loss.l1 += b.l1;
      log.loss.l2 += b.l2;
      log.loss.lo += b.lo;
      log.loss.lr += b.lr;
      log.loss.total += b.total;
    }
    const double n = static_cast<double>(pairs.size());
    log.loss.l1 /= n;
    log.loss.l2 /= n;
    log.loss.lo /= n;
    log.loss.lr /= n;
    log.loss.total /= n;
    history.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return history;
}

}  // namespace cegc
