#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ziqe/common.hpp"
#include "ziqe/nn/tensor.hpp"
#include "ziqe/rng.hpp"

namespace ziqe::data {

/// frames x dims acoustic features. After stacking dims = raw_dim * stack_window.
struct FeatureMatrix {
  nn::Tensor<float> values;
  std::size_t raw_dim = 0;
  std::size_t stack_window = 1;

  std::size_t frames() const { return values.rows(); }
  std::size_t dims() const { return values.cols(); }
  bool operator==(const FeatureMatrix&) const = default;
};

struct Utterance {
  std::string id;
  std::vector<TokenId> tokens;
  FeatureMatrix features;
};

struct QESample {
  Utterance utterance;
  std::vector<TokenId> hypothesis;
  double wer_label = 0.0;
};

struct CorruptionConfig {
  double p_clean = 0.4;  // hypothesis returned verbatim
  double p_sub = 0.15;
  double p_del = 0.05;
  double p_ins = 0.05;   // per slot, repeated (geometric count)
  std::uint64_t seed = 1;

  void validate() const;
};

/// Concatenates `window` consecutive rows into one, advancing by `stride`
/// (0 means stride = window). The last window is padded by repeating the
/// final frame. Output frames: 1 if frames <= window, otherwise
/// ceil((frames - window) / stride) + 1.
FeatureMatrix stack_frames(const FeatureMatrix& raw, std::size_t window = 4,
                           std::size_t stride = 0);

struct SynthConfig {
  std::size_t vocab_size = 50;
  std::size_t min_len = 4;
  std::size_t max_len = 12;
  std::size_t raw_dim = 80;
  std::size_t frames_per_token = 4;
  double noise_scale = 0.3;

  void validate() const;
};

/// One fixed unit-variance vector per token id.
class TokenTemplates {
 public:
  TokenTemplates(std::size_t vocab_size, std::size_t raw_dim, std::uint64_t seed);
  std::span<const float> row(TokenId id) const;
  std::size_t vocab_size() const { return vocab_; }
  std::size_t raw_dim() const { return dim_; }

 private:
  std::size_t vocab_, dim_;
  std::vector<float> table_;
};

/// Random regular tokens (ids >= 4); raw features are each token's template
/// repeated frames_per_token times plus noise_scale * gaussian noise.
Utterance synth_utterance(const TokenTemplates& templates, const SynthConfig& config,
                          std::uint64_t seed, std::string id);

struct Corruption {
  std::vector<TokenId> hypothesis;
  double wer = 0.0;
};

/// With probability p_clean returns the reference. Otherwise each token is
/// substituted (by a different regular token) with p_sub, deleted with
/// p_del, kept otherwise; each of the len + 1 gaps then receives a
/// geometric number of random insertions (continue probability p_ins).
Corruption corrupt_hypothesis(std::span<const TokenId> reference, const CorruptionConfig& config,
                              SplitMix64& rng, std::size_t vocab_size);
/// Same, with the stream seeded from config.seed.
Corruption corrupt_hypothesis(std::span<const TokenId> reference, const CorruptionConfig& config,
                              std::size_t vocab_size);

struct CorpusConfig {
  SynthConfig synth;
  CorruptionConfig corruption;
  std::size_t count = 1000;
  std::size_t stack_window = 4;
  std::size_t stack_stride = 0;
  std::uint64_t seed = 1;
};

/// Utterance i uses derive_seed(seed, i); its corruption uses
/// derive_seed(corruption.seed, i); templates use derive_seed(seed, 2^40).
/// Features are stacked.
std::vector<QESample> synth_corpus(const CorpusConfig& config);

/// Checkpoint-format file with records "features", "meta/raw_dim",
/// "meta/stack_window".
void write_features(const std::filesystem::path& path, const FeatureMatrix& features);
FeatureMatrix read_features(const std::filesystem::path& path);

inline constexpr const char* kDatasetHeader = "#ziqe-dataset v1";

/// Writes the dataset file plus one feature file per sample under
/// "features/" next to it.
void write_dataset(const std::filesystem::path& path, std::span<const QESample> samples);
/// Reads and validates a dataset; throws FormatError with the 1-based line
/// number on malformed lines or a stored WER that disagrees with the
/// recomputed one.
std::vector<QESample> read_dataset(const std::filesystem::path& path);

std::string format_tokens(std::span<const TokenId> tokens);
std::vector<TokenId> parse_tokens(const std::string& s);

}  // namespace ziqe::data
