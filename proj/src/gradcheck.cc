#include "pc/gradcheck.h"

#include <algorithm>
#include <cmath>

namespace pc {
namespace {

void require_step(double h) {
  if (!(h >= 1e-7 && h <= 1e-4)) {
    throw ContractError("grad_check step must lie in [1e-7, 1e-4], got " + std::to_string(h));
  }
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

}  // namespace

double grad_check(const TensorFn& f, const Tensor& x, double h) {
  require_step(h);
  Tensor analytic;
  {
    Tape tape;
    Var xv = tape.variable(x);
    tape.backward(f(tape, xv));
    analytic = tape.grad(xv);
  }
  auto eval = [&f](const Tensor& at) {
    Tape tape(false);
    return f(tape, tape.constant(at)).value().item();
  };
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = eval(probe);
    probe[i] = x[i] - h;
    const double down = eval(probe);
    probe[i] = x[i];
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * h)));
  }
  return worst;
}

double grad_check_params(const LossFn& f, std::span<Param* const> params, double h) {
  require_step(h);
  GradientMap grads;
  {
    Tape tape;
    grads = tape.backward(f(tape));
  }
  auto eval = [&f] {
    Tape tape(false);
    return f(tape).value().item();
  };
  double worst = 0.0;
  for (Param* p : params) {
    const auto it = grads.find(p);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double original = p->value[i];
      p->value[i] = original + h;
      const double up = eval();
      p->value[i] = original - h;
      const double down = eval();
      p->value[i] = original;
      const double analytic = it == grads.end() ? 0.0 : it->second[i];
      worst = std::max(worst, relative_error(analytic, (up - down) / (2.0 * h)));
    }
  }
  return worst;
}

}  // namespace pc
