#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ziqe/data.hpp"
#include "ziqe/distributions.hpp"
#include "ziqe/finetune.hpp"
#include "ziqe/metrics.hpp"
#include "ziqe/qe_model.hpp"
#include "ziqe/run_config.hpp"
#include "ziqe/speech_bert.hpp"

namespace ziqe::pipeline {

using Backbone = bert::SpeechBert<float>;
using QeModelF = qe::QeModel<float>;

/// Index partition of a corpus: a seeded shuffle, then the first
/// test_fraction go to test, the next dev_fraction to dev, the rest to train.
struct Splits {
  std::vector<std::size_t> train, dev, test;
};
Splits split_indices(std::size_t n, double dev_fraction, double test_fraction,
                     std::uint64_t seed);
Splits split_indices(std::size_t n, const RunConfig& config);
/// "train", "dev", "test" or "all".
std::vector<std::size_t> select_split(const Splits& splits, const std::string& name,
                                      std::size_t n);

/// Token sequence fed to the model for a hypothesis; an empty hypothesis
/// becomes the single eos token.
std::vector<TokenId> model_input(std::span<const TokenId> hypothesis,
                                 const bert::SpecialTokens& specials = {});

struct PretrainOptions {
  std::size_t epochs = 4;
  std::size_t batch_size = 16;
  nn::AdamConfig adam{};
  double grad_clip = 1.0;
  bert::MaskingConfig masking{};
  std::uint64_t seed = 1;
};

struct MaskedAccuracy {
  std::size_t correct = 0;
  std::size_t majority_correct = 0;
  std::size_t targets = 0;
  double accuracy() const { return targets ? static_cast<double>(correct) / targets : 0.0; }
  double majority() const {
    return targets ? static_cast<double>(majority_correct) / targets : 0.0;
  }
};

/// Masked-token accuracy over the reference transcripts of `indices`, and
/// the accuracy of always answering `majority_token`.
MaskedAccuracy masked_accuracy(const Backbone& model, const std::vector<data::QESample>& samples,
                               std::span<const std::size_t> indices, TokenId majority_token,
                               const bert::MaskingConfig& masking, std::uint64_t seed);

/// Most frequent reference token over `indices` (smallest id on ties).
TokenId majority_token(const std::vector<data::QESample>& samples,
                       std::span<const std::size_t> indices);

struct PretrainEpoch {
  std::size_t epoch = 0;
  double masked_lm = 0.0, asr = 0.0, total = 0.0;
  double heldout_accuracy = 0.0;
};

struct PretrainReport {
  std::vector<PretrainEpoch> epochs;
  MaskedAccuracy heldout;
};

/// Joint masked-LM + lambda_st * ASR training on the reference transcripts
/// of splits.train; accuracy is measured on splits.dev + splits.test.
PretrainReport pretrain(Backbone& model, const std::vector<data::QESample>& samples,
                        const Splits& splits, const PretrainOptions& options,
                        std::ostream* log = nullptr);

/// phi MLE on the capped positive WER labels of `indices`.
dist::PhiFit estimate_phi(const std::vector<data::QESample>& samples,
                          std::span<const std::size_t> indices);

struct FinetuneRunOptions {
  qe::HeadSpec head{};
  qe::FinetuneOptions optim{};
  std::size_t epochs = 8;
  std::size_t batch_size = 16;
  std::size_t patience = 3;
  std::uint64_t seed = 1;
};

struct FinetuneEpoch {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double dev_pearson = 0.0;  // NaN when undefined
};

struct FinetuneResult {
  QeModelF model;  // parameters of the best dev-Pearson epoch
  std::vector<FinetuneEpoch> epochs;
  std::size_t best_epoch = 0;
  double best_dev_pearson = 0.0;
};

/// Fine-tunes a copy of `backbone` with a fresh head on splits.train, early
/// stopping on dev Pearson of the predicted WER.
FinetuneResult finetune(const Backbone& backbone, const std::vector<data::QESample>& samples,
                        const Splits& splits, double phi, const FinetuneRunOptions& options,
                        std::ostream* log = nullptr);

std::vector<qe::ZeroInflatedPrediction> predict(const QeModelF& model,
                                                const std::vector<data::QESample>& samples,
                                                std::span<const std::size_t> indices);

/// Predicted expected WER against the labels of `indices`.
metrics::EvalReport evaluate_model(const QeModelF& model,
                                   const std::vector<data::QESample>& samples,
                                   std::span<const std::size_t> indices);

FinetuneRunOptions finetune_options(const RunConfig& config);
PretrainOptions pretrain_options(const RunConfig& config);

// File-level commands. Each writes its outputs plus the resolved config
// ("config.txt") under `out`.

void cmd_synth(const RunConfig& config, const std::filesystem::path& out, std::ostream& log);
void cmd_pretrain(const RunConfig& config, const std::filesystem::path& dataset,
                  const std::filesystem::path& out, std::ostream& log);
double cmd_fitphi(const RunConfig& config, const std::filesystem::path& dataset,
                  const std::filesystem::path& out, std::ostream& log);
void cmd_finetune(const RunConfig& config, const std::filesystem::path& dataset,
                  const std::filesystem::path& checkpoint, const std::filesystem::path& out,
                  std::ostream& log);
/// One line per sample: id, lambda_zero, mu, expected_wer (tab separated).
void cmd_predict(const RunConfig& config, const std::filesystem::path& checkpoint,
                 const std::filesystem::path& dataset, const std::filesystem::path& out,
                 const std::string& split, std::ostream& log);
metrics::EvalReport cmd_evaluate(const RunConfig& config,
                                 const std::filesystem::path& predictions,
                                 const std::filesystem::path& dataset,
                                 const std::filesystem::path& out, const std::string& split,
                                 std::ostream& log);
/// Returns true when every row passes.
bool cmd_gradcheck(const std::filesystem::path& out, std::ostream& log);
void cmd_dump_attention(const std::filesystem::path& checkpoint,
                        const std::filesystem::path& dataset, const std::string& sample_id,
                        const std::filesystem::path& out, std::ostream& log);

/// Reads prediction records written by cmd_predict.
struct PredictionRecord {
  std::string id;
  double lambda_zero = 0.0, mu = 0.0, expected_wer = 0.0;
};
std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);

}  // namespace ziqe::pipeline
