#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ziqe/nn/layers.hpp"

namespace ziqe::nn {

/// Causal adds M (M[i][j] = -inf for i < j) to the logits; Full adds nothing.
enum class MaskMode { Causal, Full };

/// Multi-head scaled dot-product attention:
///   softmax(Q K^T / sqrt(d / heads) + [causal] M) V, then an output projection.
/// The -inf entries of M are realized as kMaskValue. Keys whose `key_valid`
/// flag is 0 (batch padding) receive the same treatment.
template <class T>
class MultiHeadAttention {
 public:
  static constexpr double kMaskValue = -1e9;

  struct Cache {
    Tensor<T> q_in, k_in, v_in;
    Tensor<T> q, k, v;
    std::vector<Tensor<T>> probs;  // one [nq x nk] matrix per head
    Tensor<T> context;             // heads concatenated, [nq x d]
  };

  struct InputGrads {
    Tensor<T> dq, dk, dv;
  };

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore<T>& store, const std::string& name, std::size_t d_model,
                     std::size_t heads, SplitMix64& rng);

  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& q_in, const Tensor<T>& k_in,
                    const Tensor<T>& v_in, MaskMode mode,
                    std::span<const std::uint8_t> key_valid = {}, Cache* cache = nullptr) const;

  InputGrads backward(ParamStore<T>& store, const Cache& cache, const Tensor<T>& dy) const;

  /// Attention weights averaged over heads, [nq x nk].
  static Tensor<T> head_average(const Cache& cache);

  std::size_t heads() const { return heads_; }

 private:
  Dense<T> wq_, wk_, wv_, wo_;
  std::size_t d_ = 0, heads_ = 1;
};

}  // namespace ziqe::nn
