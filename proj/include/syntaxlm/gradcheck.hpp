#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "syntaxlm/rng.hpp"
#include "syntaxlm/tensor.hpp"

namespace syntaxlm {

struct GradCheckEntry {
    std::string tensor;
    std::size_t coordinate;  // flat index within the tensor
    double analytic;
    double numeric;
    double rel_error;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::vector<GradCheckEntry> entries;
};

// |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double analytic, double numeric);

// Compares `analytic` against (L(theta + eps) - L(theta - eps)) / 2 eps on
// `sample` coordinates of `params`. Coordinates are spread across tensors
// round-robin so every tensor is visited before any is visited twice; within a
// tensor they are drawn uniformly. `params` is restored after each probe.
GradCheckResult finite_diff_check(ParamStore& params, const ParamStore& analytic,
                                  const std::function<double(const ParamStore&)>& loss, double epsilon,
                                  std::size_t sample, Rng& rng);

}  // namespace syntaxlm
