#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ziqe/common.hpp"

namespace ziqe::bert {

/// Reserved ids at the bottom of the vocabulary; regular tokens start at
/// `kFirstRegular`.
struct SpecialTokens {
  TokenId pad_id = 0;
  TokenId bos_id = 1;
  TokenId eos_id = 2;
  TokenId mask_id = 3;

  static constexpr TokenId kFirstRegular = 4;

  void validate(std::size_t vocab_size) const;
  bool is_special(TokenId t) const {
    return t == pad_id || t == bos_id || t == eos_id || t == mask_id;
  }
};

/// Target selection and the treatment of selected positions. The remaining
/// 1 - mask_prob - substitute_prob of targets stay unchanged. Defaults give
/// 12% masked, 1.5% substituted, 1.5% unchanged.
struct MaskingConfig {
  double target_prob = 0.15;
  double mask_prob = 0.8;
  double substitute_prob = 0.1;

  void validate() const;
};

enum class MaskKind : std::uint8_t { Masked, Substituted, Unchanged };

struct MaskingOutcome {
  std::vector<TokenId> corrupted;
  std::vector<std::size_t> target_positions;  // strictly increasing
  std::vector<TokenId> target_labels;         // original tokens at those positions
  std::vector<MaskKind> kinds;
};

/// Selects each position independently with probability target_prob and
/// redraws the whole selection until at least one target exists. The
/// selection stream is SplitMix64(seed). Substitutes are uniform over the
/// regular (non-special) ids.
///
/// Throws std::invalid_argument for an empty sequence or one containing
/// special tokens.
MaskingOutcome apply_masking(std::span<const TokenId> tokens, std::uint64_t seed,
                             std::size_t vocab_size, const MaskingConfig& config = {},
                             const SpecialTokens& specials = {});

}  // namespace ziqe::bert
