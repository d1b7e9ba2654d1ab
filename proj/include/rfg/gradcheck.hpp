#pragma once

#include <functional>
#include <span>
#include <vector>

namespace rfg {

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
std::vector<double> central_difference(const std::function<double(std::span<const double>)>& f,
                                       std::span<const double> x, double step = 1e-5);

/// |a - b| / max(|a|, |b|) in the Euclidean norm; 0 when both vanish.
double gradient_relative_error(std::span<const double> analytic, std::span<const double> numeric);

}  // namespace rfg
