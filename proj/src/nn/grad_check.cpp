#include "guild/nn/grad_check.hpp"

#include <cmath>
#include <vector>

#include "guild/errors.hpp"

namespace guild::nn {

double grad_check(const std::function<double(std::span<const double>)>& f,
                  std::span<const float> x, std::span<const float> analytic,
                  double h) {
  if (x.size() != analytic.size())
    throw ContractError("grad_check: gradient size mismatch");
  std::vector<double> point(x.begin(), x.end());
  double worst = 0.0;
  for (size_t i = 0; i < point.size(); ++i) {
    double keep = point[i];
    point[i] = keep + h;
    double hi = f(point);
    point[i] = keep - h;
    double lo = f(point);
    point[i] = keep;
    if (!std::isfinite(hi) || !std::isfinite(lo))
      throw ContractError("grad_check: non-finite objective value");
    double numeric = (hi - lo) / (2.0 * h);
    double denom = std::max(std::abs(double(analytic[i])), 1e-8);
    double rel = std::abs(double(analytic[i]) - numeric) / denom;
    if (rel > worst) worst = rel;
  }
  return worst;
}

}  // namespace guild::nn
