#include "ziqe/masking.hpp"

#include <stdexcept>
#include <string>

#include "ziqe/rng.hpp"

namespace ziqe::bert {

void SpecialTokens::validate(std::size_t vocab_size) const {
  const TokenId ids[] = {pad_id, bos_id, eos_id, mask_id};
  for (int i = 0; i < 4; ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab_size) {
      throw std::invalid_argument("special token id outside vocabulary");
    }
    for (int j = i + 1; j < 4; ++j) {
      if (ids[i] == ids[j]) throw std::invalid_argument("special token ids must be distinct");
    }
  }
  if (vocab_size <= static_cast<std::size_t>(kFirstRegular)) {
    throw std::invalid_argument("vocabulary has no room for regular tokens");
  }
}

void MaskingConfig::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(target_prob) || !prob(mask_prob) || !prob(substitute_prob) ||
      mask_prob + substitute_prob > 1.0 + 1e-12 || target_prob == 0.0) {
    throw std::invalid_argument(
        "MaskingConfig: probabilities must lie in [0, 1], target_prob > 0, "
        "mask_prob + substitute_prob <= 1");
  }
}

MaskingOutcome apply_masking(std::span<const TokenId> tokens, std::uint64_t seed,
                             std::size_t vocab_size, const MaskingConfig& config,
                             const SpecialTokens& specials) {
  config.validate();
  specials.validate(vocab_size);
  if (tokens.empty()) throw std::invalid_argument("apply_masking: empty token sequence");
  for (TokenId t : tokens) {
    if (specials.is_special(t)) {
      throw std::invalid_argument("apply_masking: sequence contains special token " +
                                  std::to_string(t));
    }
  }
  const auto regular = vocab_size - static_cast<std::size_t>(SpecialTokens::kFirstRegular);
  SplitMix64 rng(seed);
  MaskingOutcome out;
  while (out.target_positions.empty()) {
    out.corrupted.assign(tokens.begin(), tokens.end());
    out.kinds.clear();
    out.target_labels.clear();
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (!rng.bernoulli(config.target_prob)) continue;
      out.target_positions.push_back(i);
      out.target_labels.push_back(tokens[i]);
      const double u = rng.uniform();
      if (u < config.mask_prob) {
        out.corrupted[i] = specials.mask_id;
        out.kinds.push_back(MaskKind::Masked);
      } else if (u < config.mask_prob + config.substitute_prob) {
        out.corrupted[i] =
            SpecialTokens::kFirstRegular + static_cast<TokenId>(rng.below(regular));
        out.kinds.push_back(MaskKind::Substituted);
      } else {
        out.kinds.push_back(MaskKind::Unchanged);
      }
    }
  }
  return out;
}

}  // namespace ziqe::bert
