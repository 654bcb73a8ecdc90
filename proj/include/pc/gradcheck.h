#pragma once

#include <functional>
#include <span>

#include "pc/tape.h"

namespace pc {

/// Scalar-valued function of one tensor, built on the given tape.
using TensorFn = std::function<Var(Tape&, Var)>;
/// Scalar-valued function of model params already bound by the caller.
using LossFn = std::function<Var(Tape&)>;

/// Max over entries of |analytic - central difference| / max(1, |central difference|).
/// `f` must be deterministic; nothing checks that.
double grad_check(const TensorFn& f, const Tensor& x, double h = 1e-6);

/// Same measure taken over every entry of every param in `params`; each param
/// is perturbed in place and restored afterwards.
double grad_check_params(const LossFn& f, std::span<Param* const> params, double h = 1e-6);

}  // namespace pc
