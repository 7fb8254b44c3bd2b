#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>

#include "ziqe/nn/param_store.hpp"

namespace ziqe::nn {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
  std::string worst_name;

  void merge(const GradCheckReport& o);
};

/// Denominator floor for the relative error: |a - n| / max(|a|, |n|, floor).
/// Components smaller than the floor are compared in absolute terms.
inline constexpr double kGradCheckFloor = 1e-4;

double relative_error(double analytic, double numeric, double floor = kGradCheckFloor);

/// Compares `analytic` against central differences of `loss` taken by
/// perturbing each coordinate of `x` in place by +-epsilon (restored after).
/// epsilon must lie in [1e-7, 1e-3].
GradCheckReport finite_difference_check(const std::function<double()>& loss, std::span<double> x,
                                        std::span<const double> analytic, double epsilon,
                                        double floor = kGradCheckFloor);

/// Checks every parameter of `store` whose name passes `filter` against the
/// gradients already accumulated in it.
GradCheckReport check_param_gradients(
    ParamStore<double>& store, const std::function<double()>& loss, double epsilon,
    const std::function<bool(const std::string&)>& filter = {},
    double floor = kGradCheckFloor);

}  // namespace ziqe::nn
