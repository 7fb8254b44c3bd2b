#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ziqe/masking.hpp"
#include "ziqe/nn/attention.hpp"
#include "ziqe/nn/checkpoint.hpp"
#include "ziqe/nn/layers.hpp"

namespace ziqe::bert {

using nn::MaskMode;
using nn::Tensor;

struct ModelConfig {
  std::size_t vocab_size = 50;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t encoder_layers = 2;
  std::size_t memory_layers = 2;
  std::size_t feedforward_dim = 128;
  std::size_t max_seq_len = 256;
  std::size_t feature_dim = 80;
  double lambda_st = 0.15;
  SpecialTokens specials{};

  void validate() const;
};

struct JointLossValue {
  double masked_lm = 0.0;
  double asr = 0.0;
  double total = 0.0;
};

/// Conditional masked language model over (speech features, tokens).
///
/// A pre-norm transformer encoder turns projected feature frames into a
/// memory. The text stack (self-attention, cross-attention into the memory,
/// feed-forward) runs either as a memory encoder (MaskMode::Full, masked-LM
/// objective) or as an autoregressive decoder (MaskMode::Causal, ASR
/// objective). Both modes read the same parameters.
///
/// Loss methods take `grad_scale`: 0 runs the forward pass only, any other
/// value accumulates grad_scale * d(loss)/d(theta) into params().
template <class T>
class SpeechBert {
 public:
  struct EncoderLayerCache {
    typename nn::LayerNorm<T>::Cache ln1, ln2;
    typename nn::MultiHeadAttention<T>::Cache attn;
    typename nn::FeedForward<T>::Cache ff;
  };
  struct EncoderCache {
    Tensor<T> features;
    std::vector<EncoderLayerCache> layers;
    typename nn::LayerNorm<T>::Cache final_ln;
  };
  struct TextLayerCache {
    typename nn::LayerNorm<T>::Cache ln1, ln2, ln3;
    typename nn::MultiHeadAttention<T>::Cache self_attn, cross_attn;
    typename nn::FeedForward<T>::Cache ff;
  };
  struct TextCache {
    std::vector<TokenId> tokens;
    std::vector<TextLayerCache> layers;
    typename nn::LayerNorm<T>::Cache final_ln;
  };
  /// Everything needed to back-propagate from extract_features.
  struct FeatureCache {
    EncoderCache encoder;
    TextCache text;
  };

  SpeechBert(const ModelConfig& config, std::uint64_t init_seed);

  const ModelConfig& config() const { return config_; }
  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }

  /// Speech encoder: features [frames x feature_dim] -> memory [frames x d].
  Tensor<T> speech_encode(const Tensor<T>& features, EncoderCache* cache = nullptr) const;
  /// Text stack over `tokens` attending to `memory`; returns final-layer
  /// states [tokens x d]. Pad tokens are masked out as keys.
  Tensor<T> text_encode(std::span<const TokenId> tokens, const Tensor<T>& memory, MaskMode mode,
                        TextCache* cache = nullptr) const;
  Tensor<T> output_logits(const Tensor<T>& states) const;

  /// Back-propagates d(states); returns d(memory).
  Tensor<T> text_backward(const TextCache& cache, const Tensor<T>& d_states);
  void speech_backward(const EncoderCache& cache, const Tensor<T>& d_memory);

  /// Mean NLL of the original tokens at the masked-LM targets (Full mode).
  double masked_lm_loss(const Tensor<T>& features, const MaskingOutcome& masking,
                        double grad_scale = 0.0);
  /// Teacher-forced NLL of tokens + [eos] given [bos] + tokens (Causal
  /// mode), averaged over steps.
  double asr_loss(const Tensor<T>& features, std::span<const TokenId> tokens,
                  double grad_scale = 0.0);
  /// L_SB + lambda_st * L_ST sharing one speech-encoder pass.
  JointLossValue joint_loss(const Tensor<T>& features, std::span<const TokenId> tokens,
                            const MaskingOutcome& masking, double grad_scale = 0.0);

  /// Per-step ASR negative log-likelihoods (length tokens + 1).
  std::vector<double> asr_step_losses(const Tensor<T>& features,
                                      std::span<const TokenId> tokens) const;

  /// Number of targets whose arg-max prediction equals the label.
  std::size_t masked_correct(const Tensor<T>& features, const MaskingOutcome& masking) const;

  /// Final memory-encoder states, one row per token.
  Tensor<T> extract_features(const Tensor<T>& features, std::span<const TokenId> tokens,
                             FeatureCache* cache = nullptr) const;
  void extract_features_backward(const FeatureCache& cache, const Tensor<T>& d_states);

  /// Cross-attention weights of each memory-encoder layer averaged over
  /// heads, each [tokens x frames].
  std::vector<Tensor<T>> dump_attention(const Tensor<T>& features,
                                        std::span<const TokenId> tokens) const;

  /// Names of parameters that receive gradient from a text-stack pass.
  std::vector<std::string> text_parameter_names() const;

 private:
  struct EncoderLayer {
    nn::LayerNorm<T> ln1, ln2;
    nn::MultiHeadAttention<T> attn;
    nn::FeedForward<T> ff;
  };
  struct TextLayer {
    nn::LayerNorm<T> ln1, ln2, ln3;
    nn::MultiHeadAttention<T> self_attn, cross_attn;
    nn::FeedForward<T> ff;
  };

  void check_lengths(std::size_t frames, std::size_t tokens) const;

  ModelConfig config_;
  nn::ParamStore<T> params_;
  nn::Dense<T> feature_proj_;
  std::vector<EncoderLayer> encoder_;
  nn::LayerNorm<T> encoder_norm_;
  nn::Embedding<T> embedding_;
  std::vector<TextLayer> text_;
  nn::LayerNorm<T> text_norm_;
  nn::Dense<T> output_;
  Tensor<T> positions_;
};

/// Model configuration as "config/<key>" scalar records.
std::vector<nn::NamedTensor> config_records(const ModelConfig& config);
ModelConfig config_from_records(const std::vector<nn::NamedTensor>& records);

/// Config records plus parameters under "bert/".
template <class T>
std::vector<nn::NamedTensor> to_records(const SpeechBert<T>& model) {
  auto out = config_records(model.config());
  for (auto& r : nn::to_records(model.params(), "bert/")) out.push_back(std::move(r));
  return out;
}

template <class T>
SpeechBert<T> from_records(const std::vector<nn::NamedTensor>& records) {
  SpeechBert<T> model(config_from_records(records), 0);
  model.params().assign_values(nn::from_records<float>(records, "bert/"));
  return model;
}

}  // namespace ziqe::bert
