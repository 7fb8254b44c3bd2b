#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ziqe/nn/checkpoint.hpp"
#include "ziqe/nn/lstm.hpp"
#include "ziqe/qe_losses.hpp"
#include "ziqe/speech_bert.hpp"

namespace ziqe::qe {

using nn::Tensor;

struct HeadSpec {
  HeadKind kind = HeadKind::ZiBeta;
  /// Point masses for InflatedCategorical; {0} reduces it to ZiBeta.
  std::vector<double> masses{0.0};
  /// Zero-inflated heads predict (1 - lambda) * mu when set, raw mu otherwise.
  /// Heads without a gate always predict raw mu.
  bool expected_prediction = true;
  std::size_t lstm_hidden = 64;

  void validate() const;
};

/// Bi-LSTM fusion of the token features into h, then the output layers:
/// "qe_head/mean" (mu = sigmoid(w_mu . h + b_mu)) and, for gated kinds,
/// "qe_head/gate" (lambda = sigmoid(w_lambda . h + b_lambda), or K + 1
/// logits for InflatedCategorical). Output math runs in double.
template <class T>
class QeHead {
 public:
  struct Cache {
    typename nn::BiLstm<T>::Cache lstm;
    Tensor<T> fused;
  };
  struct Output {
    ZeroInflatedPrediction prediction;
    std::vector<double> gate_logits;  // empty for ungated heads
  };
  struct Loss {
    double value = 0.0;
    double d_mean_logit = 0.0;
    std::vector<double> d_gate_logits;
  };

  QeHead(const HeadSpec& spec, std::size_t input_dim, std::uint64_t seed);

  const HeadSpec& spec() const { return spec_; }
  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }

  /// Fused vector h for a [tokens x d] feature sequence.
  Tensor<T> fuse(const Tensor<T>& states, Cache* cache = nullptr) const;
  /// Prediction from a fused vector h.
  Output predict_fused(const Tensor<T>& fused) const;
  Output forward(const Tensor<T>& states, Cache* cache = nullptr) const;

  /// Loss against a raw WER label (capped internally) and its gradient with
  /// respect to the head's logits.
  Loss loss(const Output& out, double wer, double phi) const;

  /// Accumulates scale * parameter gradients; returns d(states).
  Tensor<T> backward(const Cache& cache, const Loss& loss, double scale);

 private:
  HeadSpec spec_;
  nn::ParamStore<T> params_;
  nn::BiLstm<T> fuser_;
  nn::Dense<T> mean_;
  nn::Dense<T> gate_;
  bool gated_ = false;
};

/// Speech-BERT backbone plus a QE head and the fixed Beta precision phi.
template <class T>
class QeModel {
 public:
  QeModel(bert::SpeechBert<T> backbone, const HeadSpec& spec, double phi, std::uint64_t seed);

  bert::SpeechBert<T>& backbone() { return backbone_; }
  const bert::SpeechBert<T>& backbone() const { return backbone_; }
  QeHead<T>& head() { return head_; }
  const QeHead<T>& head() const { return head_; }
  double phi() const { return phi_; }

  ZeroInflatedPrediction predict(const Tensor<T>& features, std::span<const TokenId> hyp) const;
  ZeroInflatedPrediction predict_states(const Tensor<T>& states) const;

  /// Loss of one sample; accumulates grad_scale * gradients into the head
  /// and, when `train_backbone`, into the backbone. grad_scale 0 skips the
  /// backward pass.
  double accumulate(const Tensor<T>& features, std::span<const TokenId> hyp, double wer,
                    double grad_scale, bool train_backbone);
  /// Same, starting from precomputed backbone features (head only).
  double accumulate_states(const Tensor<T>& states, double wer, double grad_scale);

  void zero_grad();

 private:
  bert::SpeechBert<T> backbone_;
  QeHead<T> head_;
  double phi_;
};

/// Backbone records plus "qe_head/..." parameters and "meta/..." scalars
/// (phi, head kind, masses, hidden size, prediction mode).
template <class T>
std::vector<nn::NamedTensor> to_records(const QeModel<T>& model);
template <class T>
QeModel<T> qe_from_records(const std::vector<nn::NamedTensor>& records);

}  // namespace ziqe::qe
