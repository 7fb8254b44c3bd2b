#include "ziqe/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace ziqe::nn {

void GradCheckReport::merge(const GradCheckReport& o) {
  coordinates += o.coordinates;
  if (worst_name.empty() || o.max_relative_error > max_relative_error) {
    max_relative_error = o.max_relative_error;
    worst_index = o.worst_index;
    worst_name = o.worst_name;
  }
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport finite_difference_check(const std::function<double()>& loss, std::span<double> x,
                                        std::span<const double> analytic, double epsilon,
                                        double floor) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) {
    throw std::invalid_argument("finite_difference_check: epsilon must lie in [1e-7, 1e-3]");
  }
  if (x.size() != analytic.size()) {
    throw std::invalid_argument("finite_difference_check: gradient length mismatch");
  }
  GradCheckReport report;
  report.coordinates = x.size();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + epsilon;
    const double up = loss();
    x[i] = saved - epsilon;
    const double down = loss();
    x[i] = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double err = relative_error(analytic[i], numeric, floor);
    if (err > report.max_relative_error) {
      report.max_relative_error = err;
      report.worst_index = i;
    }
  }
  return report;
}

GradCheckReport check_param_gradients(ParamStore<double>& store,
                                      const std::function<double()>& loss, double epsilon,
                                      const std::function<bool(const std::string&)>& filter,
                                      double floor) {
  GradCheckReport total;
  for (auto& [name, p] : store) {
    if (filter && !filter(name)) continue;
    const std::vector<double> analytic(p.grad.flat().begin(), p.grad.flat().end());
    GradCheckReport r = finite_difference_check(loss, p.value.flat(), analytic, epsilon, floor);
    r.worst_name = name;
    total.merge(r);
  }
  return total;
}

}  // namespace ziqe::nn
