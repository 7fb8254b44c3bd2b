#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace ziqe::qe {

/// Output layer variants. The Zi* kinds add a Bernoulli gate for WER = 0.
enum class HeadKind { ZiBeta, Linear, ZiLinear, Logistic, ZiLogistic, InflatedCategorical };

std::string to_string(HeadKind kind);
HeadKind parse_head_kind(const std::string& s);
bool is_zero_inflated(HeadKind kind);

/// Largest training target; WER can exceed 1 but the Beta support ends there.
inline constexpr double kMaxTarget = 1.0 - 1e-6;

/// min(wer, kMaxTarget); throws std::domain_error for negative or NaN input.
double cap_wer(double wer);

/// lambda_zero = P(WER = 0), mu = mean of the continuous part,
/// expected_wer = (1 - lambda_zero) * mu.
struct ZeroInflatedPrediction {
  double lambda_zero = 0.0;
  double mu = 0.0;
  double expected_wer = 0.0;
};

ZeroInflatedPrediction make_prediction(double lambda_zero, double mu);

/// Loss value plus its derivatives with respect to the mean-graph output g_mu
/// and the gate output lambda (both probabilities, not logits).
struct LossGrad {
  double loss = 0.0;
  double d_mu = 0.0;
  double d_lambda = 0.0;
};

/// y* = log y - log(1 - y).
double y_star(double y);
/// mu* = psi(phi * g_mu) - psi(phi * (1 - g_mu)).
double mu_star(double g_mu, double phi);

struct Surrogate {
  double value;     // phi * g_mu * (y* - mu*), not a log-likelihood
  double gradient;  // d value / d g_mu with (y* - mu*) held constant
};

/// The gradient pre-computation objective. The factor (y* - mu*) is treated
/// as a constant, so back-propagation only sees phi * g_mu; its gradient
/// equals d/d(g_mu) of the Beta log density at y.
Surrogate surrogate_objective(double g_mu, double y, double phi);

/// Negative zero-inflated Beta log-likelihood. The Bernoulli term is always
/// present; the Beta term (y clamped to [1e-6, 1 - 1e-6]) only when y > 0.
/// d_mu comes from the surrogate. Requires y in [0, 1), g_mu and lambda in
/// (0, 1), phi > 0; throws std::domain_error otherwise.
LossGrad zi_beta_loss_and_grad(double g_mu, double lambda, double y, double phi);

/// Linear: (mu - y)^2. Logistic: -(y log mu + (1 - y) log(1 - mu)).
/// ZiLinear / ZiLogistic: Bernoulli gate term plus the continuous loss on
/// y > 0 only. ZiBeta forwards to zi_beta_loss_and_grad and needs phi.
LossGrad baseline_loss(HeadKind kind, const ZeroInflatedPrediction& prediction, double y,
                       double phi = 0.0);

struct CategoricalLoss {
  double loss = 0.0;
  std::vector<double> d_logits;  // size K + 1
  double d_mu = 0.0;
};

/// Class probabilities from K + 1 logits: index 0 is the continuous class
/// (probability 1 - lambda), index i the point mass at masses[i - 1].
std::vector<double> categorical_probabilities(std::span<const double> logits);

/// Discrete y (equal to one of `masses`) costs -log p_class; y in (0, 1]
/// matching no mass costs -log p_0 minus the Beta log density. Throws
/// std::domain_error if y fits neither branch.
CategoricalLoss inflated_categorical_loss(std::span<const double> logits, double mu,
                                          std::span<const double> masses, double y, double phi);

/// Sum of mass * probability plus p_0 * mu.
ZeroInflatedPrediction categorical_prediction(std::span<const double> logits, double mu,
                                              std::span<const double> masses);

}  // namespace ziqe::qe
