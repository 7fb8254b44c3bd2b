#include "ziqe/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "ziqe/special_fn.hpp"

namespace ziqe::dist {

using special::digamma;
using special::ln_gamma;

void BetaMeanPrecision::validate() const {
  if (!std::isfinite(mu) || !std::isfinite(phi) || mu <= 0.0 || mu >= 1.0 || phi <= 0.0) {
    throw std::domain_error("BetaMeanPrecision requires 0 < mu < 1 and phi > 0 (mu=" +
                            std::to_string(mu) + ", phi=" + std::to_string(phi) + ")");
  }
}

void BetaShape::validate() const {
  if (!std::isfinite(a) || !std::isfinite(b) || a <= 0.0 || b <= 0.0) {
    throw std::domain_error("BetaShape requires a > 0 and b > 0");
  }
}

void ZeroInflatedParams::validate() const {
  if (!std::isfinite(lambda_zero) || lambda_zero < 0.0 || lambda_zero > 1.0) {
    throw std::domain_error("ZeroInflatedParams requires lambda_zero in [0, 1]");
  }
  beta.validate();
}

BetaShape to_shape(const BetaMeanPrecision& p) {
  p.validate();
  return {p.mu * p.phi, (1.0 - p.mu) * p.phi};
}

BetaMeanPrecision to_mean_precision(const BetaShape& s) {
  s.validate();
  const double phi = s.a + s.b;
  return {s.a / phi, phi};
}

double beta_log_pdf(double y, const BetaMeanPrecision& params) {
  params.validate();
  if (!(y > 0.0 && y < 1.0)) {
    throw std::domain_error("beta_log_pdf: y must lie in (0, 1), got " + std::to_string(y));
  }
  const double a = params.mu * params.phi;
  const double b = (1.0 - params.mu) * params.phi;
  return ln_gamma(params.phi) + (a - 1.0) * std::log(y) + (b - 1.0) * std::log1p(-y) -
         ln_gamma(a) - ln_gamma(b);
}

double beta_variance(const BetaMeanPrecision& params) {
  params.validate();
  return params.mu * (1.0 - params.mu) / (1.0 + params.phi);
}

double zero_inflated_log_likelihood(double y, const ZeroInflatedParams& params) {
  params.validate();
  if (!(y >= 0.0 && y < 1.0)) {
    throw std::domain_error("zero_inflated_log_likelihood: y must lie in [0, 1), got " +
                            std::to_string(y));
  }
  if (y == 0.0) return std::log(params.lambda_zero);
  const double clamped = std::clamp(y, kSupportEpsilon, 1.0 - kSupportEpsilon);
  return std::log1p(-params.lambda_zero) + beta_log_pdf(clamped, params.beta);
}

namespace {

constexpr int kMaxIterations = 200;
constexpr double kGradientTolerance = 1e-8;

// Derivative of digamma by central difference; only feeds the Newton
// Hessian, whose accuracy affects speed of convergence, not the fixed point.
double digamma_slope(double x) {
  const double h = 1e-5 * std::max(x, 1e-3);
  const double lo = std::max(x - h, 0.5 * x);
  return (digamma(x + h) - digamma(lo)) / (x + h - lo);
}

struct SufficientStats {
  double mean_log_y;
  double mean_log_1my;
};

// Mean log-likelihood of Beta(a, b).
double mean_loglik(double a, double b, const SufficientStats& s) {
  return ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * s.mean_log_y +
         (b - 1.0) * s.mean_log_1my;
}

}  // namespace

PhiFit fit_beta_mle(std::span<const double> samples) {
  if (samples.size() < 10) {
    throw std::invalid_argument("fit_phi_mle: need at least 10 samples, got " +
                                std::to_string(samples.size()));
  }
  const double n = static_cast<double>(samples.size());
  double sum = 0.0;
  SufficientStats stats{0.0, 0.0};
  for (double y : samples) {
    if (!(y > 0.0 && y < 1.0)) {
      throw std::invalid_argument("fit_phi_mle: samples must lie strictly inside (0, 1), got " +
                                  std::to_string(y));
    }
    sum += y;
    stats.mean_log_y += std::log(y);
    stats.mean_log_1my += std::log1p(-y);
  }
  const double mean = sum / n;
  double var = 0.0;
  for (double y : samples) var += (y - mean) * (y - mean);
  var /= n;
  if (var <= 1e-14 * mean * (1.0 - mean)) {
    throw std::domain_error("fit_phi_mle: precision diverges (samples have zero variance)");
  }
  stats.mean_log_y /= n;
  stats.mean_log_1my /= n;

  // Method of moments: mean(1-mean)/var - 1 = a + b.
  const double mom_phi = std::max(mean * (1.0 - mean) / var - 1.0, 1e-2);
  double la = std::log(mean * mom_phi);
  double lb = std::log((1.0 - mean) * mom_phi);

  PhiFit fit{};
  for (int it = 0; it < kMaxIterations; ++it) {
    const double a = std::exp(la);
    const double b = std::exp(lb);
    const double psi_ab = digamma(a + b);
    const double ga = psi_ab - digamma(a) + stats.mean_log_y;
    const double gb = psi_ab - digamma(b) + stats.mean_log_1my;
    // Gradient in log coordinates.
    const double g1 = a * ga;
    const double g2 = b * gb;
    fit.iterations = it;
    fit.gradient_norm = std::hypot(g1, g2);
    if (fit.gradient_norm <= kGradientTolerance) break;

    const double t_ab = digamma_slope(a + b);
    const double haa = t_ab - digamma_slope(a);
    const double hbb = t_ab - digamma_slope(b);
    const double h11 = a * a * haa + g1;
    const double h22 = b * b * hbb + g2;
    const double h12 = a * b * t_ab;
    const double det = h11 * h22 - h12 * h12;

    double d1;
    double d2;
    if (h11 < 0.0 && det > 0.0) {
      // Newton ascent direction -H^{-1} g.
      d1 = -(h22 * g1 - h12 * g2) / det;
      d2 = -(-h12 * g1 + h11 * g2) / det;
    } else {
      d1 = g1;
      d2 = g2;
    }
    const double base = mean_loglik(a, b, stats);
    double step = 1.0;
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      const double na = la + step * d1;
      const double nb = lb + step * d2;
      if (std::isfinite(na) && std::isfinite(nb) && na < 700.0 && nb < 700.0 &&
          mean_loglik(std::exp(na), std::exp(nb), stats) >= base - 1e-15 * std::abs(base)) {
        la = na;
        lb = nb;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    if (la > 40.0 || lb > 40.0) {
      throw std::domain_error("fit_phi_mle: precision diverges");
    }
  }
  fit.shape = {std::exp(la), std::exp(lb)};
  fit.phi = fit.shape.a + fit.shape.b;
  return fit;
}

}  // namespace ziqe::dist
