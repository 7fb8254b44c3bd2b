#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ziqe/common.hpp"

namespace ziqe::metrics {

/// (substitutions + deletions + insertions) / |reference| with unit costs.
/// Throws std::invalid_argument for an empty reference.
double word_error_rate(std::span<const TokenId> reference, std::span<const TokenId> hypothesis);

/// Minimal unit-cost edit distance.
std::size_t edit_distance(std::span<const TokenId> a, std::span<const TokenId> b);

/// Mean absolute error, times 100 when `scale_percent`.
double mae(std::span<const double> predictions, std::span<const double> labels,
           bool scale_percent = true);

/// Sample Pearson coefficient. Throws std::domain_error("undefined
/// correlation") when either vector is constant.
double pearson(std::span<const double> predictions, std::span<const double> labels);

/// NDCG@k. Items are ranked by ascending predicted WER (ties keep input
/// order); relevance is 1 - min(true WER, 1), gain 2^r - 1, discount
/// 1 / log2(rank + 1). Returns 1 when the ideal DCG is 0. k = 0 means all.
double ndcg(std::span<const double> predicted_wer, std::span<const double> true_wer,
            std::size_t k = 0);

inline constexpr double kAcceptableWer = 0.14;

/// F1 of the "acceptable" class (WER <= tau), thresholding both vectors.
/// 0 when precision + recall is 0.
double f1_at_threshold(std::span<const double> predicted_wer, std::span<const double> true_wer,
                       double tau = kAcceptableWer);

struct EvalReport {
  double mae = 0.0;  // percent
  double pearson = 0.0;
  double ndcg = 0.0;
  double f1 = 0.0;
  std::size_t count = 0;
};

EvalReport evaluate(std::span<const double> predicted_wer, std::span<const double> true_wer);

/// Flat "key value" lines preceded by a "# ..." header naming the NDCG and
/// F1 conventions.
std::string to_text(const EvalReport& report);
/// Single-line JSON object.
std::string to_json(const EvalReport& report);

struct LengthBucket {
  std::size_t min_length = 0;
  std::size_t max_length = 0;
  std::size_t count = 0;
  double pearson = 0.0;  // NaN when undefined (constant or fewer than 2 items)
};

/// Pearson per token-length decile (boundaries from the sorted lengths;
/// equal lengths never straddle two buckets, so fewer than 10 may result).
std::vector<LengthBucket> pearson_by_length(std::span<const double> predicted_wer,
                                            std::span<const double> true_wer,
                                            std::span<const std::size_t> lengths,
                                            std::size_t buckets = 10);

}  // namespace ziqe::metrics
