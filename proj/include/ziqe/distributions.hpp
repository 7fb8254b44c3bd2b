#pragma once

#include <span>

namespace ziqe::dist {

/// Beta distribution in mean/precision form: a = mu * phi, b = (1 - mu) * phi.
struct BetaMeanPrecision {
  double mu;
  double phi;

  void validate() const;
};

/// Beta distribution in shape form; phi = a + b.
struct BetaShape {
  double a;
  double b;

  void validate() const;
};

BetaShape to_shape(const BetaMeanPrecision& p);
BetaMeanPrecision to_mean_precision(const BetaShape& s);

/// Point mass at zero with probability `lambda_zero`, Beta otherwise.
struct ZeroInflatedParams {
  double lambda_zero;
  BetaMeanPrecision beta;

  void validate() const;
};

/// Support clamp applied before evaluating the Beta branch.
inline constexpr double kSupportEpsilon = 1e-6;

/// Log density of Beta(mu*phi, (1-mu)*phi) at y in (0, 1).
double beta_log_pdf(double y, const BetaMeanPrecision& params);

/// mu (1 - mu) / (1 + phi).
double beta_variance(const BetaMeanPrecision& params);

/// y = 0 gives log(lambda); y in (0, 1) gives log(1 - lambda) plus the Beta
/// log density at y clamped to [1e-6, 1 - 1e-6].
double zero_inflated_log_likelihood(double y, const ZeroInflatedParams& params);

/// Per-run diagnostics of the precision fit.
struct PhiFit {
  BetaShape shape;
  double phi;
  int iterations;
  double gradient_norm;
};

/// Maximum-likelihood Beta(a, b) fit; returns phi = a + b.
///
/// Newton iterations on (log a, log b) with backtracking line search, started
/// from the method-of-moments estimate. Stops when the gradient norm of the
/// mean log-likelihood drops to 1e-8 or after 200 iterations.
///
/// Requires at least 10 samples, each strictly inside (0, 1). Throws
/// std::invalid_argument on bad input and std::domain_error("precision
/// diverges") when the samples have zero variance.
PhiFit fit_beta_mle(std::span<const double> samples);

inline double fit_phi_mle(std::span<const double> samples) { return fit_beta_mle(samples).phi; }

}  // namespace ziqe::dist
