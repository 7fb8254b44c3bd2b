#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ziqe/nn/param_store.hpp"

namespace ziqe::nn {

/// y = x W + b, with W stored as [in x out].
template <class T>
class Dense {
 public:
  Dense() = default;
  /// Registers `<name>/w` (Xavier-uniform) and `<name>/b` (zeros).
  Dense(ParamStore<T>& store, std::string name, std::size_t in, std::size_t out,
        SplitMix64& rng);

  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& x) const;
  /// Accumulates dW, db and returns dx. `x` is the forward input.
  Tensor<T> backward(ParamStore<T>& store, const Tensor<T>& x, const Tensor<T>& dy) const;
  /// Parameter gradients only.
  void backward_params(ParamStore<T>& store, const Tensor<T>& x, const Tensor<T>& dy) const;

  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }
  const std::string& weight_name() const { return w_; }
  const std::string& bias_name() const { return b_; }

 private:
  std::string w_, b_;
  std::size_t in_ = 0, out_ = 0;
};

/// Per-row normalization with learned gain (ones) and shift (zeros).
template <class T>
class LayerNorm {
 public:
  struct Cache {
    Tensor<T> normalized;
    std::vector<T> inv_std;
  };

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, std::string name, std::size_t dim);

  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& x, Cache* cache) const;
  Tensor<T> backward(ParamStore<T>& store, const Cache& cache, const Tensor<T>& dy) const;

  static constexpr double kEpsilon = 1e-5;

 private:
  std::string gamma_, beta_;
  std::size_t dim_ = 0;
};

/// Row lookup into a [vocab x dim] table, initialized with unit-variance entries.
template <class T>
class Embedding {
 public:
  Embedding() = default;
  Embedding(ParamStore<T>& store, std::string name, std::size_t vocab, std::size_t dim,
            SplitMix64& rng);

  Tensor<T> forward(const ParamStore<T>& store, std::span<const TokenId> ids) const;
  void backward(ParamStore<T>& store, std::span<const TokenId> ids, const Tensor<T>& dy) const;

  std::size_t vocab() const { return vocab_; }

 private:
  std::string table_;
  std::size_t vocab_ = 0, dim_ = 0;
};

/// Dense -> ReLU -> Dense.
template <class T>
class FeedForward {
 public:
  struct Cache {
    Tensor<T> input;
    Tensor<T> hidden;  // post-ReLU
  };

  FeedForward() = default;
  FeedForward(ParamStore<T>& store, const std::string& name, std::size_t dim, std::size_t hidden,
              SplitMix64& rng);

  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& x, Cache* cache) const;
  Tensor<T> backward(ParamStore<T>& store, const Cache& cache, const Tensor<T>& dy) const;

 private:
  Dense<T> up_, down_;
};

/// Sinusoidal encoding: row p has sin(p / 10000^(2i/d)) at column 2i and the
/// matching cosine at column 2i + 1.
template <class T>
Tensor<T> positional_encoding(std::size_t length, std::size_t dim);

/// Mean negative log-likelihood of `targets[i]` under softmax(logits row
/// `rows[i]`). Writes d(loss)/d(logits) scaled by `grad_scale` into `dlogits`
/// when non-null (dlogits must already be shaped like logits).
template <class T>
double softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> rows,
                             std::span<const TokenId> targets, Tensor<T>* dlogits,
                             double grad_scale = 1.0);

}  // namespace ziqe::nn
