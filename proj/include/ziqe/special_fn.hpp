#pragma once

namespace ziqe::special {

/// log Gamma(x) for finite x > 0. Relative error below 1e-10 on [1e-4, 1e6]
/// (series around 1 and 2 keep accuracy near the zeros of log Gamma).
/// Throws std::domain_error for non-positive or non-finite x.
double ln_gamma(double x);

/// Digamma psi(x) = d/dx log Gamma(x) for finite x > 0. Absolute error below
/// 1e-10 on [1e-4, 1e6]. Throws std::domain_error otherwise.
double digamma(double x);

}  // namespace ziqe::special
