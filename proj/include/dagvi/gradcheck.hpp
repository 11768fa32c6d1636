#pragma once

#include <functional>
#include <span>
#include <string>

#include "dagvi/tensor.hpp"

namespace dagvi {

struct GradCheckEntry {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  GradCheckEntry worst;
  std::size_t checked = 0;
  double tolerance = 0.0;
  bool passed = false;
};

// Central-difference validation of tape gradients. `make_loss` must rebuild
// the same scalar loss from the current parameter values on a fresh tape
// (deterministic: any noise must be fixed outside). Relative error uses
// |a - n| / max(|a|, |n|, 1).
GradCheckReport finite_difference_check(const std::function<Tensor(Tape&)>& make_loss,
                                        std::span<Parameter* const> params,
                                        double epsilon = 1e-5, double tolerance = 1e-6);

}  // namespace dagvi
