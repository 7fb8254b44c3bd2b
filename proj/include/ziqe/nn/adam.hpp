#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>

#include "ziqe/nn/param_store.hpp"

namespace ziqe::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment state is keyed by parameter name.
template <class T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// One update from the gradients currently in `store`. Throws
  /// std::domain_error naming the parameter if any gradient is non-finite;
  /// in that case nothing is updated.
  void step(ParamStore<T>& store);

  void set_lr(double lr) { config_.lr = lr; }
  const AdamConfig& config() const { return config_; }
  std::int64_t steps() const { return t_; }

 private:
  struct Moments {
    Tensor<T> m, v;
  };
  AdamConfig config_;
  std::int64_t t_ = 0;
  std::map<std::string, Moments> state_;
};

/// Free-function form of Adam::step.
template <class T>
void adam_step(Adam<T>& optimizer, ParamStore<T>& params) {
  optimizer.step(params);
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <class T>
double clip_grad_norm(ParamStore<T>& store, double max_norm) {
  const double norm = store.grad_norm();
  if (max_norm > 0.0 && norm > max_norm) store.scale_grad(static_cast<T>(max_norm / norm));
  return norm;
}

}  // namespace ziqe::nn
