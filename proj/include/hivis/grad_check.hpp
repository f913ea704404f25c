#pragma once

#include <functional>
#include <vector>

#include "hivis/tensor.hpp"

namespace hivis {

// fn evaluates the scalar loss at `params`; when grads != nullptr it must
// also fill one gradient tensor per parameter (analytic, via the tape).
using GradCheckFn = std::function<double(const std::vector<Tensor>& params, std::vector<Tensor>* grads)>;

// Central finite differences against the analytic gradient; returns the worst
// relative error over all coordinates. Denominator floors at 1e-6 so zero
// gradients compare by absolute error. Throws if fn is not deterministic.
double grad_check(const GradCheckFn& fn, std::vector<Tensor> params, double eps);

}  // namespace hivis
