#include <cmath>

#include "ziqe/nn/tensor.hpp"

namespace ziqe::nn {

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.cols() == b.rows(),
          "matmul: incompatible shapes " + a.shape_string() + " * " + b.shape_string());
  const std::size_t m = a.rows();
  const std::size_t k = a.cols();
  const std::size_t n = b.cols();
  Tensor<T> c = Tensor<T>::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    T* __restrict crow = c.data() + i * n;
    const T* arow = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T{0}) continue;
      const T* __restrict brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

template <class T>
void matmul_at_b_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c) {
  require(a.rank() == 2 && b.rank() == 2 && a.rows() == b.rows() && c.rows() == a.cols() &&
              c.cols() == b.cols(),
          "matmul_at_b_acc: incompatible shapes");
  const std::size_t k = a.rows();
  const std::size_t m = a.cols();
  const std::size_t n = b.cols();
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a.data() + p * m;
    const T* __restrict brow = b.data() + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      if (av == T{0}) continue;
      T* __restrict crow = c.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  require(a.rank() == 2, "transpose: rank-2 tensor required");
  Tensor<T> t = Tensor<T>::matrix(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

template <class T>
Tensor<T> matmul_a_bt(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.cols() == b.cols(),
          "matmul_a_bt: incompatible shapes " + a.shape_string() + " * " + b.shape_string() +
              "^T");
  return matmul(a, transpose(b));
}

template <class T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  require(a.same_shape(b), "add_inplace: shape mismatch " + a.shape_string() + " vs " +
                               b.shape_string());
  T* __restrict pa = a.data();
  const T* __restrict pb = b.data();
  for (std::size_t i = 0; i < a.size(); ++i) pa[i] += pb[i];
}

template <class T>
void softmax_rows(Tensor<T>& a) {
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto row = a.row(r);
    T mx = row[0];
    for (T v : row) mx = std::max(mx, v);
    T sum = 0;
    for (T& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    const T inv = T{1} / sum;
    for (T& v : row) v *= inv;
  }
}

#define ZIQE_INSTANTIATE(T)                                                     \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                \
  template void matmul_at_b_acc(const Tensor<T>&, const Tensor<T>&, Tensor<T>&); \
  template Tensor<T> matmul_a_bt(const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> transpose(const Tensor<T>&);                               \
  template void add_inplace(Tensor<T>&, const Tensor<T>&);                      \
  template void softmax_rows(Tensor<T>&);

ZIQE_INSTANTIATE(float)
ZIQE_INSTANTIATE(double)

}  // namespace ziqe::nn
