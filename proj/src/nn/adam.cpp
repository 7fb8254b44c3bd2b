#include "ziqe/nn/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace ziqe::nn {

template <class T>
void Adam<T>::step(ParamStore<T>& store) {
  for (const auto& [name, p] : store) {
    for (T g : p.grad.flat()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw std::domain_error("adam_step: non-finite gradient in parameter " + name);
      }
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  const T b1 = static_cast<T>(config_.beta1);
  const T b2 = static_cast<T>(config_.beta2);
  const T step = static_cast<T>(config_.lr / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(config_.eps);
  for (auto& [name, p] : store) {
    auto it = state_.find(name);
    if (it == state_.end()) {
      it = state_.emplace(name, Moments{Tensor<T>(p.value.shape()), Tensor<T>(p.value.shape())})
               .first;
    }
    T* __restrict m = it->second.m.data();
    T* __restrict v = it->second.v.data();
    T* __restrict w = p.value.data();
    const T* __restrict g = p.grad.data();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      m[i] = b1 * m[i] + (T{1} - b1) * g[i];
      v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
      w[i] -= step * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace ziqe::nn
