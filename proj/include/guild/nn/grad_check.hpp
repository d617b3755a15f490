#pragma once

#include <functional>
#include <span>

namespace guild::nn {

/// Central-difference gradient check. `f` evaluates the scalar objective in
/// double precision; `x` is the point the analytic float32 gradients were
/// computed at. Returns the maximum over coordinates of
/// |analytic - numeric| / max(|analytic|, 1e-8). Throws if f produces a
/// non-finite value.
double grad_check(const std::function<double(std::span<const double>)>& f,
                  std::span<const float> x, std::span<const float> analytic,
                  double h = 1e-5);

}  // namespace guild::nn
