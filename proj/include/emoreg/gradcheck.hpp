#pragma once

#include <functional>
#include <span>
#include <vector>

#include "emoreg/tensor.hpp"

namespace emoreg {

// Compares tape gradients of a deterministic scalar function against central
// finite differences, perturbing every component of every listed input.
// Returns the max over components of |analytic - numeric| divided by
// max(|analytic|, |numeric|, 1e-8). The difference quotient is formed in
// 64-bit from the actually-realized float32 perturbations.
double grad_check(const std::function<Tensor()>& f, std::span<Tensor> inputs, float step = 1e-3f);

double grad_check(const std::function<Tensor()>& f, Tensor& input, float step = 1e-3f);

}  // namespace emoreg
