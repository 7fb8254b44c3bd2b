#pragma once

#include <string>

#include "ziqe/nn/layers.hpp"

namespace ziqe::nn {

/// Single-direction LSTM with gate order (input, forget, cell, output).
/// Parameters: `<name>/w_x` [in x 4h], `<name>/w_h` [h x 4h], `<name>/b` [4h]
/// with the forget-gate bias initialized to 1. Zero initial state.
template <class T>
class Lstm {
 public:
  struct Cache {
    Tensor<T> input;   // [n x in], original order
    Tensor<T> gates;   // [n x 4h] post-activation, in processing order
    Tensor<T> cell;    // [(n+1) x h], row 0 is the initial state
    Tensor<T> hidden;  // [(n+1) x h]
    bool reverse = false;
  };

  Lstm() = default;
  Lstm(ParamStore<T>& store, std::string name, std::size_t in, std::size_t hidden,
       SplitMix64& rng);

  /// Runs over the rows of x (last to first when `reverse`) and returns the
  /// final hidden state, shape [h].
  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& x, bool reverse,
                    Cache* cache) const;
  /// Back-propagates d(final hidden) and returns dx.
  Tensor<T> backward(ParamStore<T>& store, const Cache& cache, const Tensor<T>& dh_final) const;

  std::size_t hidden() const { return hidden_; }

 private:
  std::string wx_, wh_, b_;
  std::size_t in_ = 0, hidden_ = 0;
};

/// One forward-direction and one backward-direction LSTM over the same
/// sequence; output is [last forward state, last backward state], size 2h.
/// With `tied`, both directions share one parameter set.
template <class T>
class BiLstm {
 public:
  struct Cache {
    typename Lstm<T>::Cache fwd, bwd;
  };

  BiLstm() = default;
  BiLstm(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t hidden,
         SplitMix64& rng, bool tied = false);

  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& x, Cache* cache) const;
  Tensor<T> backward(ParamStore<T>& store, const Cache& cache, const Tensor<T>& dh) const;

  std::size_t output_dim() const { return 2 * fwd_.hidden(); }

 private:
  Lstm<T> fwd_, bwd_;
};

/// bilstm_fuse: BiLstm::forward without a cache.
template <class T>
Tensor<T> bilstm_fuse(const BiLstm<T>& layer, const ParamStore<T>& store,
                      const Tensor<T>& features) {
  return layer.forward(store, features, nullptr);
}

}  // namespace ziqe::nn
