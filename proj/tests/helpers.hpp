#pragma once

#include <functional>

#include "bnn/network.hpp"

namespace bnn::testing {

/// Central finite difference of a scalar function of the parameter vector.
inline double central_diff(const std::function<double(const ParamVector&)>& f, ParamVector params,
                           std::size_t coord, double h = 1e-6) {
  const double orig = params.values[coord];
  params.values[coord] = orig + h;
  const double up = f(params);
  params.values[coord] = orig - h;
  const double down = f(params);
  params.values[coord] = orig;
  return (up - down) / (2.0 * h);
}

inline double rel_err(double got, double want) {
  const double denom = std::max({std::abs(got), std::abs(want), 1e-10});
  return std::abs(got - want) / denom;
}

}  // namespace bnn::testing
