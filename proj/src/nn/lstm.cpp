#include "ziqe/nn/lstm.hpp"

#include <cmath>

namespace ziqe::nn {
namespace {

template <class T>
T sigmoid(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

}  // namespace

template <class T>
Lstm<T>::Lstm(ParamStore<T>& store, std::string name, std::size_t in, std::size_t hidden,
              SplitMix64& rng)
    : wx_(name + "/w_x"), wh_(name + "/w_h"), b_(name + "/b"), in_(in), hidden_(hidden) {
  const double limit = 1.0 / std::sqrt(static_cast<double>(hidden));
  store.add_uniform(wx_, {in, 4 * hidden}, limit, rng);
  store.add_uniform(wh_, {hidden, 4 * hidden}, limit, rng);
  Tensor<T> bias({4 * hidden});
  for (std::size_t j = hidden; j < 2 * hidden; ++j) bias[j] = T{1};
  store.add(b_, std::move(bias));
}

template <class T>
Tensor<T> Lstm<T>::forward(const ParamStore<T>& store, const Tensor<T>& x, bool reverse,
                           Cache* cache) const {
  require(x.rank() == 2 && x.cols() == in_, "Lstm " + wx_ + ": input width mismatch");
  const std::size_t n = x.rows();
  require(n >= 1, "Lstm: empty sequence");
  const std::size_t h4 = 4 * hidden_;
  const auto& wh = store.value(wh_);
  const auto& b = store.value(b_);
  Tensor<T> xw = matmul(x, store.value(wx_));

  Tensor<T> gates = Tensor<T>::matrix(n, h4);
  Tensor<T> cell = Tensor<T>::matrix(n + 1, hidden_);
  Tensor<T> hid = Tensor<T>::matrix(n + 1, hidden_);
  std::vector<T> z(h4);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t t = reverse ? n - 1 - s : s;
    for (std::size_t j = 0; j < h4; ++j) z[j] = xw(t, j) + b[j];
    for (std::size_t p = 0; p < hidden_; ++p) {
      const T hp = hid(s, p);
      if (hp == T{0}) continue;
      const T* wrow = wh.data() + p * h4;
      for (std::size_t j = 0; j < h4; ++j) z[j] += hp * wrow[j];
    }
    for (std::size_t k = 0; k < hidden_; ++k) {
      const T ig = sigmoid(z[k]);
      const T fg = sigmoid(z[hidden_ + k]);
      const T gg = std::tanh(z[2 * hidden_ + k]);
      const T og = sigmoid(z[3 * hidden_ + k]);
      gates(s, k) = ig;
      gates(s, hidden_ + k) = fg;
      gates(s, 2 * hidden_ + k) = gg;
      gates(s, 3 * hidden_ + k) = og;
      const T c = fg * cell(s, k) + ig * gg;
      cell(s + 1, k) = c;
      hid(s + 1, k) = og * std::tanh(c);
    }
  }
  Tensor<T> out({hidden_});
  for (std::size_t k = 0; k < hidden_; ++k) out[k] = hid(n, k);
  if (cache) {
    cache->input = x;
    cache->gates = std::move(gates);
    cache->cell = std::move(cell);
    cache->hidden = std::move(hid);
    cache->reverse = reverse;
  }
  return out;
}

template <class T>
Tensor<T> Lstm<T>::backward(ParamStore<T>& store, const Cache& cache,
                            const Tensor<T>& dh_final) const {
  const std::size_t n = cache.input.rows();
  const std::size_t h = hidden_;
  const std::size_t h4 = 4 * h;
  const auto& wh = store.value(wh_);
  auto& dwh = store.grad(wh_);
  Tensor<T> dz_all = Tensor<T>::matrix(n, h4);
  std::vector<T> dh(dh_final.flat().begin(), dh_final.flat().end());
  std::vector<T> dc(h, T{0});
  std::vector<T> dz(h4);
  for (std::size_t s = n; s-- > 0;) {
    const std::size_t t = cache.reverse ? n - 1 - s : s;
    for (std::size_t k = 0; k < h; ++k) {
      const T ig = cache.gates(s, k);
      const T fg = cache.gates(s, h + k);
      const T gg = cache.gates(s, 2 * h + k);
      const T og = cache.gates(s, 3 * h + k);
      const T c = cache.cell(s + 1, k);
      const T tc = std::tanh(c);
      const T d_o = dh[k] * tc;
      const T dck = dc[k] + dh[k] * og * (T{1} - tc * tc);
      dz[k] = dck * gg * ig * (T{1} - ig);
      dz[h + k] = dck * cache.cell(s, k) * fg * (T{1} - fg);
      dz[2 * h + k] = dck * ig * (T{1} - gg * gg);
      dz[3 * h + k] = d_o * og * (T{1} - og);
      dc[k] = dck * fg;
    }
    for (std::size_t j = 0; j < h4; ++j) dz_all(t, j) = dz[j];
    for (std::size_t p = 0; p < h; ++p) {
      const T hp = cache.hidden(s, p);
      const T* wrow = wh.data() + p * h4;
      T* grow = dwh.data() + p * h4;
      T acc = 0;
      for (std::size_t j = 0; j < h4; ++j) {
        acc += dz[j] * wrow[j];
        grow[j] += hp * dz[j];
      }
      dh[p] = acc;
    }
  }
  matmul_at_b_acc(cache.input, dz_all, store.grad(wx_));
  auto& db = store.grad(b_);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j < h4; ++j) db[j] += dz_all(t, j);
  return matmul_a_bt(dz_all, store.value(wx_));
}

template <class T>
BiLstm<T>::BiLstm(ParamStore<T>& store, const std::string& name, std::size_t in,
                  std::size_t hidden, SplitMix64& rng, bool tied) {
  if (tied) {
    fwd_ = Lstm<T>(store, name + "/shared", in, hidden, rng);
    bwd_ = fwd_;
  } else {
    fwd_ = Lstm<T>(store, name + "/fwd", in, hidden, rng);
    bwd_ = Lstm<T>(store, name + "/bwd", in, hidden, rng);
  }
}

template <class T>
Tensor<T> BiLstm<T>::forward(const ParamStore<T>& store, const Tensor<T>& x,
                             Cache* cache) const {
  Tensor<T> f = fwd_.forward(store, x, false, cache ? &cache->fwd : nullptr);
  Tensor<T> b = bwd_.forward(store, x, true, cache ? &cache->bwd : nullptr);
  const std::size_t h = fwd_.hidden();
  Tensor<T> out({2 * h});
  for (std::size_t k = 0; k < h; ++k) {
    out[k] = f[k];
    out[h + k] = b[k];
  }
  return out;
}

template <class T>
Tensor<T> BiLstm<T>::backward(ParamStore<T>& store, const Cache& cache,
                              const Tensor<T>& dh) const {
  const std::size_t h = fwd_.hidden();
  require(dh.size() == 2 * h, "BiLstm: gradient size mismatch");
  Tensor<T> df({h});
  Tensor<T> db({h});
  for (std::size_t k = 0; k < h; ++k) {
    df[k] = dh[k];
    db[k] = dh[h + k];
  }
  Tensor<T> dx = fwd_.backward(store, cache.fwd, df);
  add_inplace(dx, bwd_.backward(store, cache.bwd, db));
  return dx;
}

template class Lstm<float>;
template class Lstm<double>;
template class BiLstm<float>;
template class BiLstm<double>;

}  // namespace ziqe::nn
