#include "ziqe/qe_model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ziqe/rng.hpp"

namespace ziqe::qe {

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Keeps saturated sigmoids inside the open interval the losses require.
double open_unit(double p) { return std::clamp(p, 1e-12, 1.0 - 1e-12); }

std::size_t gate_width(const HeadSpec& spec) {
  if (spec.kind == HeadKind::InflatedCategorical) return spec.masses.size() + 1;
  return is_zero_inflated(spec.kind) ? 1 : 0;
}

}  // namespace

void HeadSpec::validate() const {
  if (lstm_hidden == 0) throw std::invalid_argument("HeadSpec: lstm_hidden must be positive");
  if (kind == HeadKind::InflatedCategorical) {
    if (masses.empty()) throw std::invalid_argument("HeadSpec: categorical head needs masses");
    for (double m : masses) {
      if (!(m >= 0.0 && m <= 1.0)) throw std::invalid_argument("HeadSpec: mass outside [0, 1]");
    }
  }
}

template <class T>
QeHead<T>::QeHead(const HeadSpec& spec, std::size_t input_dim, std::uint64_t seed)
    : spec_(spec) {
  spec_.validate();
  SplitMix64 rng(seed);
  fuser_ = nn::BiLstm<T>(params_, "bilstm", input_dim, spec_.lstm_hidden, rng);
  mean_ = nn::Dense<T>(params_, "mean", fuser_.output_dim(), 1, rng);
  const std::size_t g = gate_width(spec_);
  gated_ = g > 0;
  if (gated_) gate_ = nn::Dense<T>(params_, "gate", fuser_.output_dim(), g, rng);
}

template <class T>
Tensor<T> QeHead<T>::fuse(const Tensor<T>& states, Cache* cache) const {
  Tensor<T> h = fuser_.forward(params_, states, cache ? &cache->lstm : nullptr);
  Tensor<T> fused({1, h.size()}, std::vector<T>(h.flat().begin(), h.flat().end()));
  if (cache) cache->fused = fused;
  return fused;
}

template <class T>
typename QeHead<T>::Output QeHead<T>::predict_fused(const Tensor<T>& fused) const {
  Output out;
  const double mu = open_unit(sigmoid(static_cast<double>(mean_.forward(params_, fused)[0])));
  if (!gated_) {
    out.prediction = {0.0, mu, mu};
    return out;
  }
  const Tensor<T> g = gate_.forward(params_, fused);
  for (T v : g.flat()) out.gate_logits.push_back(static_cast<double>(v));
  if (spec_.kind == HeadKind::InflatedCategorical) {
    out.prediction = categorical_prediction(out.gate_logits, mu, spec_.masses);
  } else {
    out.prediction = make_prediction(open_unit(sigmoid(out.gate_logits[0])), mu);
  }
  if (!spec_.expected_prediction) out.prediction.expected_wer = mu;
  return out;
}

template <class T>
typename QeHead<T>::Output QeHead<T>::forward(const Tensor<T>& states, Cache* cache) const {
  return predict_fused(fuse(states, cache));
}

template <class T>
typename QeHead<T>::Loss QeHead<T>::loss(const Output& out, double wer, double phi) const {
  Loss l;
  const double mu = out.prediction.mu;
  if (spec_.kind == HeadKind::InflatedCategorical) {
    const CategoricalLoss c =
        inflated_categorical_loss(out.gate_logits, mu, spec_.masses, std::min(wer, 1.0), phi);
    l.value = c.loss;
    l.d_mean_logit = c.d_mu * mu * (1.0 - mu);
    l.d_gate_logits = c.d_logits;
    return l;
  }
  const double y = cap_wer(wer);
  const LossGrad g = spec_.kind == HeadKind::ZiBeta
                         ? zi_beta_loss_and_grad(mu, out.prediction.lambda_zero, y, phi)
                         : baseline_loss(spec_.kind, out.prediction, y, phi);
  l.value = g.loss;
  l.d_mean_logit = g.d_mu * mu * (1.0 - mu);
  if (gated_) {
    const double lambda = out.prediction.lambda_zero;
    l.d_gate_logits = {g.d_lambda * lambda * (1.0 - lambda)};
  }
  return l;
}

template <class T>
Tensor<T> QeHead<T>::backward(const Cache& cache, const Loss& loss, double scale) {
  Tensor<T> dmean({1, 1}, static_cast<T>(loss.d_mean_logit * scale));
  Tensor<T> dfused = mean_.backward(params_, cache.fused, dmean);
  if (gated_) {
    Tensor<T> dgate({1, loss.d_gate_logits.size()});
    for (std::size_t i = 0; i < loss.d_gate_logits.size(); ++i) {
      dgate[i] = static_cast<T>(loss.d_gate_logits[i] * scale);
    }
    nn::add_inplace(dfused, gate_.backward(params_, cache.fused, dgate));
  }
  Tensor<T> dh({dfused.size()}, dfused.storage());
  return fuser_.backward(params_, cache.lstm, dh);
}

template <class T>
QeModel<T>::QeModel(bert::SpeechBert<T> backbone, const HeadSpec& spec, double phi,
                    std::uint64_t seed)
    : backbone_(std::move(backbone)),
      head_(spec, backbone_.config().d_model, seed),
      phi_(phi) {
  if (!(phi > 0.0) || !std::isfinite(phi)) {
    throw std::invalid_argument("QeModel: phi must be positive and finite");
  }
}

template <class T>
ZeroInflatedPrediction QeModel<T>::predict(const Tensor<T>& features,
                                           std::span<const TokenId> hyp) const {
  return predict_states(backbone_.extract_features(features, hyp));
}

template <class T>
ZeroInflatedPrediction QeModel<T>::predict_states(const Tensor<T>& states) const {
  return head_.forward(states).prediction;
}

template <class T>
double QeModel<T>::accumulate(const Tensor<T>& features, std::span<const TokenId> hyp,
                              double wer, double grad_scale, bool train_backbone) {
  if (!train_backbone) {
    return accumulate_states(backbone_.extract_features(features, hyp), wer, grad_scale);
  }
  typename bert::SpeechBert<T>::FeatureCache fc;
  const Tensor<T> states = backbone_.extract_features(features, hyp, &fc);
  typename QeHead<T>::Cache hc;
  const auto out = head_.forward(states, &hc);
  const auto l = head_.loss(out, wer, phi_);
  if (grad_scale != 0.0) {
    backbone_.extract_features_backward(fc, head_.backward(hc, l, grad_scale));
  }
  return l.value;
}

template <class T>
double QeModel<T>::accumulate_states(const Tensor<T>& states, double wer, double grad_scale) {
  typename QeHead<T>::Cache hc;
  const auto out = head_.forward(states, &hc);
  const auto l = head_.loss(out, wer, phi_);
  if (grad_scale != 0.0) head_.backward(hc, l, grad_scale);
  return l.value;
}

template <class T>
void QeModel<T>::zero_grad() {
  backbone_.params().zero_grad();
  head_.params().zero_grad();
}

template <class T>
std::vector<nn::NamedTensor> to_records(const QeModel<T>& model) {
  auto out = bert::to_records(model.backbone());
  for (auto& r : nn::to_records(model.head().params(), "qe_head/")) out.push_back(std::move(r));
  const HeadSpec& spec = model.head().spec();
  out.push_back(nn::scalar_record("meta/phi", model.phi()));
  out.push_back(nn::scalar_record("meta/head_kind", static_cast<double>(spec.kind)));
  out.push_back(nn::scalar_record("meta/lstm_hidden", static_cast<double>(spec.lstm_hidden)));
  out.push_back(nn::scalar_record("meta/expected_prediction", spec.expected_prediction ? 1 : 0));
  nn::Tensor<float> masses({spec.masses.size()});
  for (std::size_t i = 0; i < spec.masses.size(); ++i) masses[i] = static_cast<float>(spec.masses[i]);
  out.push_back({"meta/masses", masses});
  return out;
}

template <class T>
QeModel<T> qe_from_records(const std::vector<nn::NamedTensor>& records) {
  HeadSpec spec;
  const double kind = nn::find_scalar(records, "meta/head_kind");
  if (kind < 0 || kind > static_cast<double>(HeadKind::InflatedCategorical)) {
    throw std::invalid_argument("checkpoint: unknown head kind");
  }
  spec.kind = static_cast<HeadKind>(static_cast<int>(kind));
  spec.lstm_hidden = static_cast<std::size_t>(nn::find_scalar(records, "meta/lstm_hidden"));
  spec.expected_prediction = nn::find_scalar(records, "meta/expected_prediction") != 0.0;
  spec.masses.clear();
  for (const auto& r : records) {
    if (r.name != "meta/masses") continue;
    for (float m : r.tensor.flat()) spec.masses.push_back(static_cast<double>(m));
  }
  if (spec.masses.empty()) spec.masses = {0.0};
  QeModel<T> model(bert::from_records<T>(records), spec, nn::find_scalar(records, "meta/phi"), 0);
  model.head().params().assign_values(nn::from_records<float>(records, "qe_head/"));
  return model;
}

#define ZIQE_INSTANTIATE(T)                                                          \
  template class QeHead<T>;                                                          \
  template class QeModel<T>;                                                         \
  template std::vector<nn::NamedTensor> to_records(const QeModel<T>&);               \
  template QeModel<T> qe_from_records<T>(const std::vector<nn::NamedTensor>&);
ZIQE_INSTANTIATE(float)
ZIQE_INSTANTIATE(double)
#undef ZIQE_INSTANTIATE

}  // namespace ziqe::qe
