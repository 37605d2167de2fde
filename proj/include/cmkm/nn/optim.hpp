#pragma once

#include <vector>

#include "cmkm/nn/layers.hpp"

namespace cmkm::nn {

template <typename Real>
class Adam {
 public:
  Adam(StateList<Real> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void step();
  void zero_grad();
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  StateList<Real> params_;  // trainable entries only
  std::vector<Tensor<Real>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long step_count_ = 0;
};

/// Reduce-on-plateau learning-rate policy.
struct OptimizerSchedule {
  double lr = 1e-3;
  int plateau_patience_epochs = 20;
  double reduction_factor = 0.1;
  int max_reductions = 2;
  double improvement_threshold = 1e-5;  // relative

  void validate() const;
};

/// Online form of the plateau rule: an epoch counts as an improvement when
/// its loss is below best * (1 - threshold). After `patience` consecutive
/// non-improving epochs the rate is multiplied by the reduction factor and
/// the counter restarts; at most `max_reductions` reductions happen.
class PlateauScheduler {
 public:
  explicit PlateauScheduler(OptimizerSchedule schedule);

  /// Feeds one epoch's monitored loss; returns the rate for the next epoch.
  double step(double loss);
  double lr() const { return lr_; }
  int reductions() const { return reductions_; }

 private:
  OptimizerSchedule schedule_;
  double lr_;
  double best_;
  int bad_epochs_ = 0;
  int reductions_ = 0;
};

/// Replays the plateau rule over a loss history and returns the resulting rate.
double step_scheduler(const OptimizerSchedule& schedule, const std::vector<double>& epoch_losses);

}  // namespace cmkm::nn
