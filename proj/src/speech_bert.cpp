#include "ziqe/speech_bert.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "ziqe/rng.hpp"

namespace ziqe::bert {

void ModelConfig::validate() const {
  if (vocab_size == 0 || d_model == 0 || heads == 0 || encoder_layers == 0 ||
      memory_layers == 0 || feedforward_dim == 0 || max_seq_len == 0 || feature_dim == 0) {
    throw std::invalid_argument("ModelConfig: all sizes and counts must be >= 1");
  }
  if (d_model % heads != 0) {
    throw std::invalid_argument("ModelConfig: d_model must be divisible by heads");
  }
  if (!std::isfinite(lambda_st) || lambda_st < 0.0) {
    throw std::invalid_argument("ModelConfig: lambda_st must be finite and >= 0");
  }
  specials.validate(vocab_size);
}

namespace {

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out = a;
  nn::add_inplace(out, b);
  return out;
}

std::vector<std::uint8_t> key_mask(std::span<const TokenId> tokens, TokenId pad) {
  if (std::find(tokens.begin(), tokens.end(), pad) == tokens.end()) return {};
  std::vector<std::uint8_t> valid(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) valid[i] = tokens[i] != pad;
  return valid;
}

}  // namespace

template <class T>
SpeechBert<T>::SpeechBert(const ModelConfig& config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  SplitMix64 rng(init_seed);
  const std::size_t d = config_.d_model;
  feature_proj_ = nn::Dense<T>(params_, "enc/proj", config_.feature_dim, d, rng);
  for (std::size_t i = 0; i < config_.encoder_layers; ++i) {
    const std::string p = "enc/" + std::to_string(i);
    encoder_.push_back({nn::LayerNorm<T>(params_, p + "/ln1", d),
                        nn::LayerNorm<T>(params_, p + "/ln2", d),
                        nn::MultiHeadAttention<T>(params_, p + "/attn", d, config_.heads, rng),
                        nn::FeedForward<T>(params_, p + "/ff", d, config_.feedforward_dim, rng)});
  }
  encoder_norm_ = nn::LayerNorm<T>(params_, "enc/final_ln", d);
  embedding_ = nn::Embedding<T>(params_, "txt/embed", config_.vocab_size, d, rng);
  for (std::size_t i = 0; i < config_.memory_layers; ++i) {
    const std::string p = "txt/" + std::to_string(i);
    text_.push_back(
        {nn::LayerNorm<T>(params_, p + "/ln1", d), nn::LayerNorm<T>(params_, p + "/ln2", d),
         nn::LayerNorm<T>(params_, p + "/ln3", d),
         nn::MultiHeadAttention<T>(params_, p + "/self_attn", d, config_.heads, rng),
         nn::MultiHeadAttention<T>(params_, p + "/cross_attn", d, config_.heads, rng),
         nn::FeedForward<T>(params_, p + "/ff", d, config_.feedforward_dim, rng)});
  }
  text_norm_ = nn::LayerNorm<T>(params_, "txt/final_ln", d);
  output_ = nn::Dense<T>(params_, "txt/out", d, config_.vocab_size, rng);
  positions_ = nn::positional_encoding<T>(config_.max_seq_len, d);
}

template <class T>
void SpeechBert<T>::check_lengths(std::size_t frames, std::size_t tokens) const {
  if (frames > config_.max_seq_len || tokens > config_.max_seq_len) {
    throw ShapeError("SpeechBert: sequence longer than max_seq_len " +
                     std::to_string(config_.max_seq_len));
  }
}

template <class T>
Tensor<T> SpeechBert<T>::speech_encode(const Tensor<T>& features, EncoderCache* cache) const {
  nn::require(features.rank() == 2 && features.rows() >= 1,
              "speech_encode: features must be a non-empty [frames x dims] matrix");
  nn::require(features.cols() == config_.feature_dim,
              "speech_encode: feature width " + std::to_string(features.cols()) +
                  " does not match config feature_dim " + std::to_string(config_.feature_dim));
  check_lengths(features.rows(), 0);
  const std::size_t n = features.rows();
  const std::size_t d = config_.d_model;
  Tensor<T> x = feature_proj_.forward(params_, features);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) x(r, j) += positions_(r, j);
  if (cache) {
    cache->features = features;
    cache->layers.assign(encoder_.size(), {});
  }
  for (std::size_t l = 0; l < encoder_.size(); ++l) {
    const auto& layer = encoder_[l];
    EncoderLayerCache* lc = cache ? &cache->layers[l] : nullptr;
    Tensor<T> a = layer.ln1.forward(params_, x, lc ? &lc->ln1 : nullptr);
    nn::add_inplace(x, layer.attn.forward(params_, a, a, a, MaskMode::Full, {},
                                          lc ? &lc->attn : nullptr));
    Tensor<T> b = layer.ln2.forward(params_, x, lc ? &lc->ln2 : nullptr);
    nn::add_inplace(x, layer.ff.forward(params_, b, lc ? &lc->ff : nullptr));
  }
  return encoder_norm_.forward(params_, x, cache ? &cache->final_ln : nullptr);
}

template <class T>
void SpeechBert<T>::speech_backward(const EncoderCache& cache, const Tensor<T>& d_memory) {
  Tensor<T> dx = encoder_norm_.backward(params_, cache.final_ln, d_memory);
  for (std::size_t l = encoder_.size(); l-- > 0;) {
    const auto& layer = encoder_[l];
    const auto& lc = cache.layers[l];
    nn::add_inplace(dx, layer.ln2.backward(params_, lc.ln2, layer.ff.backward(params_, lc.ff, dx)));
    auto g = layer.attn.backward(params_, lc.attn, dx);
    nn::add_inplace(g.dq, g.dk);
    nn::add_inplace(g.dq, g.dv);
    nn::add_inplace(dx, layer.ln1.backward(params_, lc.ln1, g.dq));
  }
  feature_proj_.backward_params(params_, cache.features, dx);
}

template <class T>
Tensor<T> SpeechBert<T>::text_encode(std::span<const TokenId> tokens, const Tensor<T>& memory,
                                     MaskMode mode, TextCache* cache) const {
  nn::require(!tokens.empty(), "text_encode: empty token sequence");
  nn::require(memory.rank() == 2 && memory.cols() == config_.d_model,
              "text_encode: memory width mismatch");
  check_lengths(0, tokens.size());
  const std::size_t n = tokens.size();
  const std::size_t d = config_.d_model;
  const auto valid = key_mask(tokens, config_.specials.pad_id);
  Tensor<T> x = embedding_.forward(params_, tokens);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) x(r, j) += positions_(r, j);
  if (cache) {
    cache->tokens.assign(tokens.begin(), tokens.end());
    cache->layers.assign(text_.size(), {});
  }
  for (std::size_t l = 0; l < text_.size(); ++l) {
    const auto& layer = text_[l];
    TextLayerCache* lc = cache ? &cache->layers[l] : nullptr;
    Tensor<T> a = layer.ln1.forward(params_, x, lc ? &lc->ln1 : nullptr);
    nn::add_inplace(
        x, layer.self_attn.forward(params_, a, a, a, mode, valid, lc ? &lc->self_attn : nullptr));
    Tensor<T> b = layer.ln2.forward(params_, x, lc ? &lc->ln2 : nullptr);
    nn::add_inplace(x, layer.cross_attn.forward(params_, b, memory, memory, MaskMode::Full, {},
                                                lc ? &lc->cross_attn : nullptr));
    Tensor<T> c = layer.ln3.forward(params_, x, lc ? &lc->ln3 : nullptr);
    nn::add_inplace(x, layer.ff.forward(params_, c, lc ? &lc->ff : nullptr));
  }
  return text_norm_.forward(params_, x, cache ? &cache->final_ln : nullptr);
}

template <class T>
Tensor<T> SpeechBert<T>::text_backward(const TextCache& cache, const Tensor<T>& d_states) {
  Tensor<T> dx = text_norm_.backward(params_, cache.final_ln, d_states);
  Tensor<T> d_memory;
  for (std::size_t l = text_.size(); l-- > 0;) {
    const auto& layer = text_[l];
    const auto& lc = cache.layers[l];
    nn::add_inplace(dx, layer.ln3.backward(params_, lc.ln3, layer.ff.backward(params_, lc.ff, dx)));
    auto cross = layer.cross_attn.backward(params_, lc.cross_attn, dx);
    nn::add_inplace(dx, layer.ln2.backward(params_, lc.ln2, cross.dq));
    nn::add_inplace(cross.dk, cross.dv);
    if (d_memory.empty()) {
      d_memory = std::move(cross.dk);
    } else {
      nn::add_inplace(d_memory, cross.dk);
    }
    auto self = layer.self_attn.backward(params_, lc.self_attn, dx);
    nn::add_inplace(self.dq, self.dk);
    nn::add_inplace(self.dq, self.dv);
    nn::add_inplace(dx, layer.ln1.backward(params_, lc.ln1, self.dq));
  }
  embedding_.backward(params_, cache.tokens, dx);
  return d_memory;
}

template <class T>
Tensor<T> SpeechBert<T>::output_logits(const Tensor<T>& states) const {
  return output_.forward(params_, states);
}

template <class T>
double SpeechBert<T>::masked_lm_loss(const Tensor<T>& features, const MaskingOutcome& masking,
                                     double grad_scale) {
  if (masking.target_positions.empty()) {
    throw std::invalid_argument("masked_lm_loss: masking outcome has no targets");
  }
  return joint_loss(features, {}, masking, grad_scale).masked_lm;
}

template <class T>
double SpeechBert<T>::asr_loss(const Tensor<T>& features, std::span<const TokenId> tokens,
                               double grad_scale) {
  const bool backprop = grad_scale != 0.0;
  EncoderCache enc;
  Tensor<T> memory = speech_encode(features, backprop ? &enc : nullptr);
  std::vector<TokenId> input{config_.specials.bos_id};
  input.insert(input.end(), tokens.begin(), tokens.end());
  std::vector<TokenId> target(tokens.begin(), tokens.end());
  target.push_back(config_.specials.eos_id);
  std::vector<std::size_t> rows(input.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;

  TextCache tc;
  Tensor<T> states = text_encode(input, memory, MaskMode::Causal, backprop ? &tc : nullptr);
  Tensor<T> logits = output_logits(states);
  if (!backprop) return nn::softmax_cross_entropy<T>(logits, rows, target, nullptr);
  Tensor<T> dlogits(logits.shape());
  const double loss = nn::softmax_cross_entropy<T>(logits, rows, target, &dlogits, grad_scale);
  speech_backward(enc, text_backward(tc, output_.backward(params_, states, dlogits)));
  return loss;
}

template <class T>
JointLossValue SpeechBert<T>::joint_loss(const Tensor<T>& features,
                                         std::span<const TokenId> tokens,
                                         const MaskingOutcome& masking, double grad_scale) {
  if (masking.target_positions.empty()) {
    throw std::invalid_argument("joint_loss: masking outcome has no targets");
  }
  const bool backprop = grad_scale != 0.0;
  const bool with_asr = config_.lambda_st != 0.0 && !tokens.empty();
  EncoderCache enc;
  Tensor<T> memory = speech_encode(features, backprop ? &enc : nullptr);

  JointLossValue value;
  Tensor<T> d_memory;
  {
    TextCache tc;
    Tensor<T> states =
        text_encode(masking.corrupted, memory, MaskMode::Full, backprop ? &tc : nullptr);
    Tensor<T> logits = output_logits(states);
    Tensor<T> dlogits;
    if (backprop) dlogits = Tensor<T>(logits.shape());
    value.masked_lm = nn::softmax_cross_entropy<T>(logits, masking.target_positions,
                                                   masking.target_labels,
                                                   backprop ? &dlogits : nullptr, grad_scale);
    if (backprop) d_memory = text_backward(tc, output_.backward(params_, states, dlogits));
  }
  if (with_asr) {
    std::vector<TokenId> input{config_.specials.bos_id};
    input.insert(input.end(), tokens.begin(), tokens.end());
    std::vector<TokenId> target(tokens.begin(), tokens.end());
    target.push_back(config_.specials.eos_id);
    std::vector<std::size_t> rows(input.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    TextCache tc;
    Tensor<T> states = text_encode(input, memory, MaskMode::Causal, backprop ? &tc : nullptr);
    Tensor<T> logits = output_logits(states);
    Tensor<T> dlogits;
    if (backprop) dlogits = Tensor<T>(logits.shape());
    value.asr = nn::softmax_cross_entropy<T>(logits, rows, target, backprop ? &dlogits : nullptr,
                                             grad_scale * config_.lambda_st);
    if (backprop) {
      nn::add_inplace(d_memory, text_backward(tc, output_.backward(params_, states, dlogits)));
    }
  }
  value.total = value.masked_lm + config_.lambda_st * value.asr;
  if (backprop) speech_backward(enc, d_memory);
  return value;
}

template <class T>
std::vector<double> SpeechBert<T>::asr_step_losses(const Tensor<T>& features,
                                                   std::span<const TokenId> tokens) const {
  Tensor<T> memory = speech_encode(features);
  std::vector<TokenId> input{config_.specials.bos_id};
  input.insert(input.end(), tokens.begin(), tokens.end());
  std::vector<TokenId> target(tokens.begin(), tokens.end());
  target.push_back(config_.specials.eos_id);
  Tensor<T> logits = output_logits(text_encode(input, memory, MaskMode::Causal));
  std::vector<double> out(input.size());
  for (std::size_t i = 0; i < input.size(); ++i) {
    const std::size_t row[] = {i};
    const TokenId t[] = {target[i]};
    out[i] = nn::softmax_cross_entropy<T>(logits, row, t, nullptr);
  }
  return out;
}

template <class T>
std::size_t SpeechBert<T>::masked_correct(const Tensor<T>& features,
                                          const MaskingOutcome& masking) const {
  Tensor<T> memory = speech_encode(features);
  Tensor<T> logits = output_logits(text_encode(masking.corrupted, memory, MaskMode::Full));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < masking.target_positions.size(); ++i) {
    auto row = logits.row(masking.target_positions[i]);
    const auto best = std::max_element(row.begin(), row.end()) - row.begin();
    if (static_cast<TokenId>(best) == masking.target_labels[i]) ++correct;
  }
  return correct;
}

template <class T>
Tensor<T> SpeechBert<T>::extract_features(const Tensor<T>& features,
                                          std::span<const TokenId> tokens,
                                          FeatureCache* cache) const {
  Tensor<T> memory = speech_encode(features, cache ? &cache->encoder : nullptr);
  return text_encode(tokens, memory, MaskMode::Full, cache ? &cache->text : nullptr);
}

template <class T>
void SpeechBert<T>::extract_features_backward(const FeatureCache& cache,
                                              const Tensor<T>& d_states) {
  speech_backward(cache.encoder, text_backward(cache.text, d_states));
}

template <class T>
std::vector<Tensor<T>> SpeechBert<T>::dump_attention(const Tensor<T>& features,
                                                     std::span<const TokenId> tokens) const {
  FeatureCache cache;
  extract_features(features, tokens, &cache);
  std::vector<Tensor<T>> out;
  for (const auto& layer : cache.text.layers) {
    out.push_back(nn::MultiHeadAttention<T>::head_average(layer.cross_attn));
  }
  return out;
}

template <class T>
std::vector<std::string> SpeechBert<T>::text_parameter_names() const {
  std::vector<std::string> out;
  for (const auto& [name, p] : params_)
    if (name.rfind("txt/", 0) == 0) out.push_back(name);
  return out;
}

template class SpeechBert<float>;
template class SpeechBert<double>;

}  // namespace ziqe::bert

namespace ziqe::bert {

std::vector<nn::NamedTensor> config_records(const ModelConfig& c) {
  auto s = [](const char* key, double v) { return nn::scalar_record(std::string("config/") + key, v); };
  return {s("vocab_size", static_cast<double>(c.vocab_size)),
          s("d_model", static_cast<double>(c.d_model)),
          s("heads", static_cast<double>(c.heads)),
          s("encoder_layers", static_cast<double>(c.encoder_layers)),
          s("memory_layers", static_cast<double>(c.memory_layers)),
          s("feedforward_dim", static_cast<double>(c.feedforward_dim)),
          s("max_seq_len", static_cast<double>(c.max_seq_len)),
          s("feature_dim", static_cast<double>(c.feature_dim)),
          s("lambda_st", c.lambda_st)};
}

ModelConfig config_from_records(const std::vector<nn::NamedTensor>& records) {
  auto get = [&](const char* key) { return nn::find_scalar(records, std::string("config/") + key); };
  auto count = [&](const char* key) { return static_cast<std::size_t>(get(key)); };
  ModelConfig c;
  c.vocab_size = count("vocab_size");
  c.d_model = count("d_model");
  c.heads = count("heads");
  c.encoder_layers = count("encoder_layers");
  c.memory_layers = count("memory_layers");
  c.feedforward_dim = count("feedforward_dim");
  c.max_seq_len = count("max_seq_len");
  c.feature_dim = count("feature_dim");
  c.lambda_st = get("lambda_st");
  c.validate();
  return c;
}

}  // namespace ziqe::bert
