#include "cmkm/nn/optim.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace cmkm::nn {

template <typename Real>
Adam<Real>::Adam(StateList<Real> params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto& p : params) {
    if (!p.grad) continue;
    m_.emplace_back(p.value->shape());
    v_.emplace_back(p.value->shape());
    params_.push_back(p);
  }
}

template <typename Real>
void Adam<Real>::step() {
  ++step_count_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  const Real b1 = static_cast<Real>(beta1_), b2 = static_cast<Real>(beta2_);
  const Real step = static_cast<Real>(lr_ / c1);
  const Real corr2 = static_cast<Real>(1.0 / c2);
  const Real eps = static_cast<Real>(eps_);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor<Real>& w = *params_[k].value;
    const Tensor<Real>& g = *params_[k].grad;
    Tensor<Real>& m = m_[k];
    Tensor<Real>& v = v_[k];
    for (Index i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (Real(1) - b1) * g[i];
      v[i] = b2 * v[i] + (Real(1) - b2) * g[i] * g[i];
      w[i] -= step * m[i] / (std::sqrt(v[i] * corr2) + eps);
    }
  }
}

template <typename Real>
void Adam<Real>::zero_grad() {
  for (auto& p : params_) p.grad->fill(Real(0));
}

template class Adam<float>;
template class Adam<double>;

void OptimizerSchedule::validate() const {
  if (!(lr > 0)) throw std::invalid_argument("optimizer: lr must be > 0");
  if (!(reduction_factor > 0 && reduction_factor < 1))
    throw std::invalid_argument("optimizer: reduction_factor must lie in (0, 1)");
  if (max_reductions < 0) throw std::invalid_argument("optimizer: max_reductions must be >= 0");
  if (plateau_patience_epochs < 1)
    throw std::invalid_argument("optimizer: plateau_patience_epochs must be >= 1");
  if (improvement_threshold < 0)
    throw std::invalid_argument("optimizer: improvement_threshold must be >= 0");
}

PlateauScheduler::PlateauScheduler(OptimizerSchedule schedule)
    : schedule_(schedule), lr_(schedule.lr), best_(std::numeric_limits<double>::infinity()) {
  schedule_.validate();
}

double PlateauScheduler::step(double loss) {
  const double bar = std::isinf(best_) ? best_ : best_ - std::abs(best_) * schedule_.improvement_threshold;
  if (loss < bar) {
    best_ = loss;
    bad_epochs_ = 0;
    return lr_;
  }
  ++bad_epochs_;
  if (bad_epochs_ >= schedule_.plateau_patience_epochs && reductions_ < schedule_.max_reductions) {
    lr_ *= schedule_.reduction_factor;
    ++reductions_;
    bad_epochs_ = 0;
  }
  return lr_;
}

double step_scheduler(const OptimizerSchedule& schedule, const std::vector<double>& epoch_losses) {
  if (epoch_losses.empty()) throw std::invalid_argument("step_scheduler: empty loss history");
  PlateauScheduler s(schedule);
  for (double l : epoch_losses) s.step(l);
  return s.lr();
}

}  // namespace cmkm::nn
