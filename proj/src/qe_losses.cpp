#include "ziqe/qe_losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ziqe/distributions.hpp"
#include "ziqe/special_fn.hpp"

namespace ziqe::qe {

std::string to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::ZiBeta: return "zi_beta";
    case HeadKind::Linear: return "linear";
    case HeadKind::ZiLinear: return "zi_linear";
    case HeadKind::Logistic: return "logistic";
    case HeadKind::ZiLogistic: return "zi_logistic";
    case HeadKind::InflatedCategorical: return "inflated_categorical";
  }
  return "unknown";
}

HeadKind parse_head_kind(const std::string& s) {
  for (HeadKind k : {HeadKind::ZiBeta, HeadKind::Linear, HeadKind::ZiLinear, HeadKind::Logistic,
                     HeadKind::ZiLogistic, HeadKind::InflatedCategorical}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown head kind '" + s + "'");
}

bool is_zero_inflated(HeadKind kind) {
  return kind == HeadKind::ZiBeta || kind == HeadKind::ZiLinear ||
         kind == HeadKind::ZiLogistic || kind == HeadKind::InflatedCategorical;
}

double cap_wer(double wer) {
  if (!(wer >= 0.0)) throw std::domain_error("WER must be >= 0");
  return std::min(wer, kMaxTarget);
}

ZeroInflatedPrediction make_prediction(double lambda_zero, double mu) {
  return {lambda_zero, mu, (1.0 - lambda_zero) * mu};
}

double y_star(double y) { return std::log(y) - std::log1p(-y); }

double mu_star(double g_mu, double phi) {
  return special::digamma(phi * g_mu) - special::digamma(phi * (1.0 - g_mu));
}

namespace {

void require_open_unit(double v, const char* what) {
  if (!(v > 0.0 && v < 1.0)) {
    throw std::domain_error(std::string(what) + " must lie strictly inside (0, 1), got " +
                            std::to_string(v));
  }
}

void require_target(double y) {
  if (!(y >= 0.0 && y < 1.0)) {
    throw std::domain_error("target y must lie in [0, 1) after capping, got " + std::to_string(y));
  }
}

double clamp_support(double y) {
  return std::clamp(y, dist::kSupportEpsilon, 1.0 - dist::kSupportEpsilon);
}

// Bernoulli gate part: -log lambda for y = 0, -log(1 - lambda) otherwise.
void add_gate(LossGrad& out, double lambda, double y) {
  if (y == 0.0) {
    out.loss += -std::log(lambda);
    out.d_lambda = -1.0 / lambda;
  } else {
    out.loss += -std::log1p(-lambda);
    out.d_lambda = 1.0 / (1.0 - lambda);
  }
}

}  // namespace

Surrogate surrogate_objective(double g_mu, double y, double phi) {
  require_open_unit(g_mu, "g_mu");
  require_open_unit(y, "y");
  if (!(phi > 0.0) || !std::isfinite(phi)) throw std::domain_error("phi must be > 0");
  const double blocked = y_star(y) - mu_star(g_mu, phi);
  return {phi * g_mu * blocked, phi * blocked};
}

LossGrad zi_beta_loss_and_grad(double g_mu, double lambda, double y, double phi) {
  require_target(y);
  require_open_unit(g_mu, "g_mu");
  require_open_unit(lambda, "lambda");
  LossGrad out;
  add_gate(out, lambda, y);
  if (y > 0.0) {
    const double yc = clamp_support(y);
    out.loss += -dist::beta_log_pdf(yc, {g_mu, phi});
    out.d_mu = -surrogate_objective(g_mu, yc, phi).gradient;
  }
  return out;
}

LossGrad baseline_loss(HeadKind kind, const ZeroInflatedPrediction& prediction, double y,
                       double phi) {
  require_target(y);
  const double mu = prediction.mu;
  require_open_unit(mu, "mu");
  auto squared = [&](LossGrad& out) {
    out.loss += (mu - y) * (mu - y);
    out.d_mu = 2.0 * (mu - y);
  };
  auto cross_entropy = [&](LossGrad& out) {
    out.loss += -(y * std::log(mu) + (1.0 - y) * std::log1p(-mu));
    out.d_mu = (mu - y) / (mu * (1.0 - mu));
  };
  LossGrad out;
  switch (kind) {
    case HeadKind::Linear:
      squared(out);
      return out;
    case HeadKind::Logistic:
      cross_entropy(out);
      return out;
    case HeadKind::ZiLinear:
      require_open_unit(prediction.lambda_zero, "lambda");
      add_gate(out, prediction.lambda_zero, y);
      if (y > 0.0) squared(out);
      return out;
    case HeadKind::ZiLogistic:
      require_open_unit(prediction.lambda_zero, "lambda");
      add_gate(out, prediction.lambda_zero, y);
      if (y > 0.0) cross_entropy(out);
      return out;
    case HeadKind::ZiBeta:
      return zi_beta_loss_and_grad(mu, prediction.lambda_zero, y, phi);
    case HeadKind::InflatedCategorical:
      break;
  }
  throw std::invalid_argument("baseline_loss: use inflated_categorical_loss for categorical heads");
}

std::vector<double> categorical_probabilities(std::span<const double> logits) {
  if (logits.size() < 2) throw std::invalid_argument("categorical head needs K + 1 >= 2 logits");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

CategoricalLoss inflated_categorical_loss(std::span<const double> logits, double mu,
                                          std::span<const double> masses, double y, double phi) {
  if (logits.size() != masses.size() + 1) {
    throw std::invalid_argument("inflated_categorical_loss: need K + 1 logits for K masses");
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  const double log_norm = mx + std::log(sum);

  std::size_t cls = 0;
  bool matched = false;
  for (std::size_t i = 0; i < masses.size(); ++i) {
    if (y == masses[i]) {
      cls = i + 1;
      matched = true;
      break;
    }
  }
  if (!matched && !(y > 0.0 && y <= 1.0)) {
    throw std::domain_error("inflated_categorical_loss: y=" + std::to_string(y) +
                            " matches no point mass and lies outside (0, 1]");
  }
  CategoricalLoss out;
  out.loss = -(logits[cls] - log_norm);
  out.d_logits.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.d_logits[i] = std::exp(logits[i] - log_norm) - (i == cls ? 1.0 : 0.0);
  }
  if (!matched) {
    require_open_unit(mu, "mu");
    const double yc = clamp_support(y);
    out.loss += -dist::beta_log_pdf(yc, {mu, phi});
    out.d_mu = -surrogate_objective(mu, yc, phi).gradient;
  }
  return out;
}

ZeroInflatedPrediction categorical_prediction(std::span<const double> logits, double mu,
                                              std::span<const double> masses) {
  const auto p = categorical_probabilities(logits);
  if (p.size() != masses.size() + 1) {
    throw std::invalid_argument("categorical_prediction: need K + 1 logits for K masses");
  }
  double expected = p[0] * mu;
  for (std::size_t i = 0; i < masses.size(); ++i) expected += p[i + 1] * masses[i];
  return {1.0 - p[0], mu, expected};
}

}  // namespace ziqe::qe
