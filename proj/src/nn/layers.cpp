#include "ziqe/nn/layers.hpp"

#include <cmath>

namespace ziqe::nn {

template <class T>
Dense<T>::Dense(ParamStore<T>& store, std::string name, std::size_t in, std::size_t out,
                SplitMix64& rng)
    : w_(name + "/w"), b_(name + "/b"), in_(in), out_(out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  store.add_uniform(w_, {in, out}, limit, rng);
  store.add_constant(b_, {out}, T{0});
}

template <class T>
Tensor<T> Dense<T>::forward(const ParamStore<T>& store, const Tensor<T>& x) const {
  require(x.rank() == 2 && x.cols() == in_, "Dense " + w_ + ": expected input width " +
                                                std::to_string(in_) + ", got " +
                                                x.shape_string());
  Tensor<T> y = matmul(x, store.value(w_));
  const auto& b = store.value(b_);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    T* __restrict row = y.data() + r * out_;
    for (std::size_t j = 0; j < out_; ++j) row[j] += b[j];
  }
  return y;
}

template <class T>
void Dense<T>::backward_params(ParamStore<T>& store, const Tensor<T>& x,
                               const Tensor<T>& dy) const {
  require(dy.rank() == 2 && dy.cols() == out_ && dy.rows() == x.rows(),
          "Dense " + w_ + ": gradient shape mismatch");
  matmul_at_b_acc(x, dy, store.grad(w_));
  auto& db = store.grad(b_);
  for (std::size_t r = 0; r < dy.rows(); ++r)
    for (std::size_t j = 0; j < out_; ++j) db[j] += dy(r, j);
}

template <class T>
Tensor<T> Dense<T>::backward(ParamStore<T>& store, const Tensor<T>& x, const Tensor<T>& dy) const {
  backward_params(store, x, dy);
  return matmul_a_bt(dy, store.value(w_));
}

template <class T>
LayerNorm<T>::LayerNorm(ParamStore<T>& store, std::string name, std::size_t dim)
    : gamma_(name + "/gamma"), beta_(name + "/beta"), dim_(dim) {
  store.add_constant(gamma_, {dim}, T{1});
  store.add_constant(beta_, {dim}, T{0});
}

template <class T>
Tensor<T> LayerNorm<T>::forward(const ParamStore<T>& store, const Tensor<T>& x,
                                Cache* cache) const {
  require(x.rank() == 2 && x.cols() == dim_, "LayerNorm " + gamma_ + ": width mismatch");
  const auto& g = store.value(gamma_);
  const auto& b = store.value(beta_);
  const std::size_t n = x.rows();
  Tensor<T> xhat = Tensor<T>::matrix(n, dim_);
  std::vector<T> inv_std(n);
  Tensor<T> y = Tensor<T>::matrix(n, dim_);
  for (std::size_t r = 0; r < n; ++r) {
    auto xr = x.row(r);
    T mean = 0;
    for (T v : xr) mean += v;
    mean /= static_cast<T>(dim_);
    T var = 0;
    for (T v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<T>(dim_);
    const T is = T{1} / std::sqrt(var + static_cast<T>(kEpsilon));
    inv_std[r] = is;
    for (std::size_t j = 0; j < dim_; ++j) {
      const T h = (xr[j] - mean) * is;
      xhat(r, j) = h;
      y(r, j) = h * g[j] + b[j];
    }
  }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <class T>
Tensor<T> LayerNorm<T>::backward(ParamStore<T>& store, const Cache& cache,
                                 const Tensor<T>& dy) const {
  const auto& g = store.value(gamma_);
  auto& dg = store.grad(gamma_);
  auto& db = store.grad(beta_);
  const std::size_t n = dy.rows();
  Tensor<T> dx = Tensor<T>::matrix(n, dim_);
  const T inv_d = T{1} / static_cast<T>(dim_);
  for (std::size_t r = 0; r < n; ++r) {
    T sum_dh = 0;
    T sum_dh_h = 0;
    for (std::size_t j = 0; j < dim_; ++j) {
      const T h = cache.normalized(r, j);
      const T d = dy(r, j);
      dg[j] += d * h;
      db[j] += d;
      const T dh = d * g[j];
      sum_dh += dh;
      sum_dh_h += dh * h;
    }
    const T is = cache.inv_std[r];
    for (std::size_t j = 0; j < dim_; ++j) {
      const T h = cache.normalized(r, j);
      const T dh = dy(r, j) * g[j];
      dx(r, j) = is * (dh - inv_d * sum_dh - h * inv_d * sum_dh_h);
    }
  }
  return dx;
}

template <class T>
Embedding<T>::Embedding(ParamStore<T>& store, std::string name, std::size_t vocab,
                        std::size_t dim, SplitMix64& rng)
    : table_(name + "/table"), vocab_(vocab), dim_(dim) {
  Tensor<T> v({vocab, dim});
  for (T& x : v.flat()) x = static_cast<T>(rng.gaussian());
  store.add(table_, std::move(v));
}

template <class T>
Tensor<T> Embedding<T>::forward(const ParamStore<T>& store, std::span<const TokenId> ids) const {
  const auto& table = store.value(table_);
  Tensor<T> out = Tensor<T>::matrix(ids.size(), dim_);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab_) {
      throw std::out_of_range("Embedding " + table_ + ": token id " + std::to_string(ids[i]) +
                              " outside vocabulary of " + std::to_string(vocab_));
    }
    auto src = table.row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

template <class T>
void Embedding<T>::backward(ParamStore<T>& store, std::span<const TokenId> ids,
                            const Tensor<T>& dy) const {
  auto& g = store.grad(table_);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto dst = g.row(static_cast<std::size_t>(ids[i]));
    auto src = dy.row(i);
    for (std::size_t j = 0; j < dim_; ++j) dst[j] += src[j];
  }
}

template <class T>
FeedForward<T>::FeedForward(ParamStore<T>& store, const std::string& name, std::size_t dim,
                            std::size_t hidden, SplitMix64& rng)
    : up_(store, name + "/up", dim, hidden, rng), down_(store, name + "/down", hidden, dim, rng) {}

template <class T>
Tensor<T> FeedForward<T>::forward(const ParamStore<T>& store, const Tensor<T>& x,
                                  Cache* cache) const {
  Tensor<T> h = up_.forward(store, x);
  for (T& v : h.flat()) v = v > T{0} ? v : T{0};
  Tensor<T> y = down_.forward(store, h);
  if (cache) {
    cache->input = x;
    cache->hidden = std::move(h);
  }
  return y;
}

template <class T>
Tensor<T> FeedForward<T>::backward(ParamStore<T>& store, const Cache& cache,
                                   const Tensor<T>& dy) const {
  Tensor<T> dh = down_.backward(store, cache.hidden, dy);
  for (std::size_t i = 0; i < dh.size(); ++i)
    if (cache.hidden[i] <= T{0}) dh[i] = T{0};
  return up_.backward(store, cache.input, dh);
}

template <class T>
Tensor<T> positional_encoding(std::size_t length, std::size_t dim) {
  Tensor<T> pe = Tensor<T>::matrix(length, dim);
  for (std::size_t p = 0; p < length; ++p) {
    for (std::size_t i = 0; i < dim; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(dim));
      const double angle = static_cast<double>(p) * freq;
      pe(p, i) = static_cast<T>(std::sin(angle));
      if (i + 1 < dim) pe(p, i + 1) = static_cast<T>(std::cos(angle));
    }
  }
  return pe;
}

template <class T>
double softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> rows,
                             std::span<const TokenId> targets, Tensor<T>* dlogits,
                             double grad_scale) {
  require(rows.size() == targets.size(), "softmax_cross_entropy: rows/targets length mismatch");
  require(!rows.empty(), "softmax_cross_entropy: no targets");
  const std::size_t v = logits.cols();
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  double total = 0.0;
  std::vector<double> probs(v);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto row = logits.row(rows[i]);
    double mx = row[0];
    for (T x : row) mx = std::max(mx, static_cast<double>(x));
    double sum = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      probs[j] = std::exp(static_cast<double>(row[j]) - mx);
      sum += probs[j];
    }
    const auto t = static_cast<std::size_t>(targets[i]);
    require(t < v, "softmax_cross_entropy: target outside vocabulary");
    total += -(static_cast<double>(row[t]) - mx - std::log(sum));
    if (dlogits) {
      auto drow = dlogits->row(rows[i]);
      for (std::size_t j = 0; j < v; ++j) {
        const double p = probs[j] / sum - (j == t ? 1.0 : 0.0);
        drow[j] += static_cast<T>(p * inv_n * grad_scale);
      }
    }
  }
  return total * inv_n;
}

#define ZIQE_INSTANTIATE(T)                                                        \
  template class Dense<T>;                                                         \
  template class LayerNorm<T>;                                                     \
  template class Embedding<T>;                                                     \
  template class FeedForward<T>;                                                   \
  template Tensor<T> positional_encoding<T>(std::size_t, std::size_t);             \
  template double softmax_cross_entropy(const Tensor<T>&, std::span<const std::size_t>, \
                                        std::span<const TokenId>, Tensor<T>*, double);

ZIQE_INSTANTIATE(float)
ZIQE_INSTANTIATE(double)

}  // namespace ziqe::nn
