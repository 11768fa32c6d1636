#include "dagvi/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace dagvi {

GradCheckReport finite_difference_check(const std::function<Tensor(Tape&)>& make_loss,
                                        std::span<Parameter* const> params,
                                        double epsilon, double tolerance) {
  if (epsilon < 1e-6 || epsilon > 1e-4)
    throw std::invalid_argument("finite_difference_check: epsilon " +
                                std::to_string(epsilon) + " outside [1e-6, 1e-4]");
  GradCheckReport report;
  report.tolerance = tolerance;

  // Analytic gradients from one tape evaluation.
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tensor loss = make_loss(tape);
    tape.backward(loss);
    for (Parameter* p : params) {
      const std::vector<double>* g = tape.grad_of(*p);
      if (!g)
        throw std::invalid_argument("finite_difference_check: parameter '" + p->name +
                                    "' was not bound by make_loss");
      analytic.push_back(*g);
    }
  }

  auto eval = [&]() {
    Tape tape;
    return make_loss(tape).scalar();
  };

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    for (std::size_t i = 0; i < p.size(); ++i) {
      double saved = p.value[i];
      p.value[i] = saved + epsilon;
      double up = eval();
      p.value[i] = saved - epsilon;
      double down = eval();
      p.value[i] = saved;
      double numeric = (up - down) / (2.0 * epsilon);
      double a = analytic[pi][i];
      double rel = std::abs(a - numeric) /
                   std::max({std::abs(a), std::abs(numeric), 1.0});
      ++report.checked;
      if (rel >= report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = {p.name, i, a, numeric, rel};
      }
    }
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

}  // namespace dagvi
