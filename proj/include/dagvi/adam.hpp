#pragma once

#include <cstdint>
#include <vector>

#include "dagvi/tensor.hpp"

namespace dagvi {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // decoupled, applied directly to the parameter
};

// Adam with decoupled weight decay over a fixed set of parameters.
class AdamOptimizer {
 public:
  AdamOptimizer(AdamConfig cfg, std::vector<Parameter*> params);

  // One update step reading gradients from the given tape. A parameter that
  // was not bound to the tape (or has no path to the loss) sees a zero
  // gradient. Throws on non-finite gradients, naming the parameter.
  void step(const Tape& tape);

  std::int64_t step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  struct Slot {
    std::vector<double> m;
    std::vector<double> v;
  };

  AdamConfig cfg_;
  std::vector<Parameter*> params_;
  std::vector<Slot> slots_;
  std::int64_t step_ = 0;
};

}  // namespace dagvi
