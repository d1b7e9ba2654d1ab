#include "rfg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "rfg/error.hpp"

namespace rfg {

std::vector<double> central_difference(const std::function<double(std::span<const double>)>& f,
                                       std::span<const double> x, double step) {
  std::vector<double> xs(x.begin(), x.end());
  std::vector<double> g(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double x0 = xs[i];
    xs[i] = x0 + step;
    const double fp = f(xs);
    xs[i] = x0 - step;
    const double fm = f(xs);
    xs[i] = x0;
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

double gradient_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw DimensionError("gradient_relative_error: length mismatch");
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double denom = std::sqrt(std::max(na, nn));
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

}  // namespace rfg
