#include "dagvi/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace dagvi {

AdamOptimizer::AdamOptimizer(AdamConfig cfg, std::vector<Parameter*> params)
    : cfg_(cfg), params_(std::move(params)) {
  slots_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    slots_[i].m.assign(params_[i]->size(), 0.0);
    slots_[i].v.assign(params_[i]->size(), 0.0);
  }
}

void AdamOptimizer::step(const Tape& tape) {
  ++step_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Parameter& p = *params_[pi];
    const std::vector<double>* grad = tape.grad_of(p);
    Slot& s = slots_[pi];
    for (std::size_t i = 0; i < p.size(); ++i) {
      double g = grad ? (*grad)[i] : 0.0;
      if (!std::isfinite(g))
        throw std::runtime_error("adam: non-finite gradient for parameter '" + p.name +
                                 "' at index " + std::to_string(i));
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g;
      s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g * g;
      double mhat = s.m[i] / bc1;
      double vhat = s.v[i] / bc2;
      p.value[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.epsilon) +
                               cfg_.weight_decay * p.value[i]);
    }
  }
}

}  // namespace dagvi
