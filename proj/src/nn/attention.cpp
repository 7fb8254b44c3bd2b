#include "ziqe/nn/attention.hpp"

#include <cmath>

namespace ziqe::nn {
namespace {

template <class T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t begin, std::size_t width) {
  Tensor<T> out = Tensor<T>::matrix(a.rows(), width);
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t j = 0; j < width; ++j) out(r, j) = a(r, begin + j);
  return out;
}

template <class T>
void put_cols(Tensor<T>& dst, const Tensor<T>& src, std::size_t begin) {
  for (std::size_t r = 0; r < src.rows(); ++r)
    for (std::size_t j = 0; j < src.cols(); ++j) dst(r, begin + j) = src(r, j);
}

}  // namespace

template <class T>
MultiHeadAttention<T>::MultiHeadAttention(ParamStore<T>& store, const std::string& name,
                                          std::size_t d_model, std::size_t heads,
                                          SplitMix64& rng)
    : d_(d_model), heads_(heads) {
  if (heads == 0 || d_model % heads != 0) {
    throw ShapeError("MultiHeadAttention: d_model " + std::to_string(d_model) +
                     " not divisible by heads " + std::to_string(heads));
  }
  wq_ = Dense<T>(store, name + "/q", d_model, d_model, rng);
  wk_ = Dense<T>(store, name + "/k", d_model, d_model, rng);
  wv_ = Dense<T>(store, name + "/v", d_model, d_model, rng);
  wo_ = Dense<T>(store, name + "/o", d_model, d_model, rng);
}

template <class T>
Tensor<T> MultiHeadAttention<T>::forward(const ParamStore<T>& store, const Tensor<T>& q_in,
                                         const Tensor<T>& k_in, const Tensor<T>& v_in,
                                         MaskMode mode, std::span<const std::uint8_t> key_valid,
                                         Cache* cache) const {
  require(q_in.rank() == 2 && k_in.rank() == 2 && v_in.rank() == 2,
          "attention: rank-2 inputs required");
  require(q_in.cols() == d_ && k_in.cols() == d_ && v_in.cols() == d_,
          "attention: model width mismatch");
  require(k_in.rows() == v_in.rows(), "attention: key/value length mismatch");
  require(q_in.rows() > 0 && k_in.rows() > 0, "attention: empty sequence");
  const std::size_t nq = q_in.rows();
  const std::size_t nk = k_in.rows();
  if (mode == MaskMode::Causal) {
    require(nq == nk, "attention: causal mode needs queries and keys from one sequence");
  }
  require(key_valid.empty() || key_valid.size() == nk, "attention: key mask length mismatch");

  Tensor<T> q = wq_.forward(store, q_in);
  Tensor<T> k = wk_.forward(store, k_in);
  Tensor<T> v = wv_.forward(store, v_in);

  const std::size_t dh = d_ / heads_;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d_) / heads_));
  const T masked = static_cast<T>(kMaskValue);
  Tensor<T> context = Tensor<T>::matrix(nq, d_);
  std::vector<Tensor<T>> probs;
  probs.reserve(heads_);
  for (std::size_t h = 0; h < heads_; ++h) {
    Tensor<T> qh = slice_cols(q, h * dh, dh);
    Tensor<T> kh = slice_cols(k, h * dh, dh);
    Tensor<T> vh = slice_cols(v, h * dh, dh);
    Tensor<T> s = matmul_a_bt(qh, kh);
    for (std::size_t i = 0; i < nq; ++i) {
      for (std::size_t j = 0; j < nk; ++j) {
        T x = s(i, j) * scale;
        if (mode == MaskMode::Causal && i < j) x += masked;
        if (!key_valid.empty() && !key_valid[j]) x += masked;
        s(i, j) = x;
      }
    }
    softmax_rows(s);
    put_cols(context, matmul(s, vh), h * dh);
    probs.push_back(std::move(s));
  }
  Tensor<T> y = wo_.forward(store, context);
  if (cache) {
    cache->q_in = q_in;
    cache->k_in = k_in;
    cache->v_in = v_in;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->context = std::move(context);
  }
  return y;
}

template <class T>
typename MultiHeadAttention<T>::InputGrads MultiHeadAttention<T>::backward(
    ParamStore<T>& store, const Cache& cache, const Tensor<T>& dy) const {
  const std::size_t nq = cache.q.rows();
  const std::size_t nk = cache.k.rows();
  const std::size_t dh = d_ / heads_;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d_) / heads_));

  Tensor<T> dcontext = wo_.backward(store, cache.context, dy);
  Tensor<T> dq = Tensor<T>::matrix(nq, d_);
  Tensor<T> dk = Tensor<T>::matrix(nk, d_);
  Tensor<T> dv = Tensor<T>::matrix(nk, d_);
  for (std::size_t h = 0; h < heads_; ++h) {
    const Tensor<T>& p = cache.probs[h];
    Tensor<T> qh = slice_cols(cache.q, h * dh, dh);
    Tensor<T> kh = slice_cols(cache.k, h * dh, dh);
    Tensor<T> vh = slice_cols(cache.v, h * dh, dh);
    Tensor<T> dctx = slice_cols(dcontext, h * dh, dh);

    Tensor<T> dvh = Tensor<T>::matrix(nk, dh);
    matmul_at_b_acc(p, dctx, dvh);
    Tensor<T> dp = matmul_a_bt(dctx, vh);
    // Softmax Jacobian, then the 1/sqrt(d/h) scale.
    for (std::size_t i = 0; i < nq; ++i) {
      T dot = 0;
      for (std::size_t j = 0; j < nk; ++j) dot += p(i, j) * dp(i, j);
      for (std::size_t j = 0; j < nk; ++j) dp(i, j) = p(i, j) * (dp(i, j) - dot) * scale;
    }
    Tensor<T> dqh = matmul(dp, kh);
    Tensor<T> dkh = Tensor<T>::matrix(nk, dh);
    matmul_at_b_acc(dp, qh, dkh);
    put_cols(dq, dqh, h * dh);
    put_cols(dk, dkh, h * dh);
    put_cols(dv, dvh, h * dh);
  }
  return {wq_.backward(store, cache.q_in, dq), wk_.backward(store, cache.k_in, dk),
          wv_.backward(store, cache.v_in, dv)};
}

template <class T>
Tensor<T> MultiHeadAttention<T>::head_average(const Cache& cache) {
  require(!cache.probs.empty(), "attention: no cached weights");
  Tensor<T> avg(cache.probs.front().shape());
  for (const auto& p : cache.probs) add_inplace(avg, p);
  const T inv = T{1} / static_cast<T>(cache.probs.size());
  for (T& x : avg.flat()) x *= inv;
  return avg;
}

template class MultiHeadAttention<float>;
template class MultiHeadAttention<double>;

}  // namespace ziqe::nn
