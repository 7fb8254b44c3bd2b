#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ziqe/nn/tensor.hpp"
#include "ziqe/rng.hpp"

namespace ziqe::nn {

/// A named parameter and its same-shaped gradient accumulator.
template <class T>
struct Param {
  Tensor<T> value;
  Tensor<T> grad;
};

/// Named parameters. Iteration order is lexicographic by name, which fixes
/// checkpoint layout and optimizer update order.
template <class T>
class ParamStore {
 public:
  using Map = std::map<std::string, Param<T>>;

  Param<T>& add(const std::string& name, Tensor<T> value) {
    if (params_.count(name)) throw std::invalid_argument("ParamStore: duplicate name " + name);
    Tensor<T> grad(value.shape());
    auto [it, ok] = params_.emplace(name, Param<T>{std::move(value), std::move(grad)});
    return it->second;
  }

  /// Uniform(-limit, limit) initialization.
  Param<T>& add_uniform(const std::string& name, std::vector<std::size_t> shape, double limit,
                        SplitMix64& rng) {
    Tensor<T> v(std::move(shape));
    for (T& x : v.flat()) x = static_cast<T>(rng.uniform(-limit, limit));
    return add(name, std::move(v));
  }

  Param<T>& add_constant(const std::string& name, std::vector<std::size_t> shape, T value) {
    return add(name, Tensor<T>(std::move(shape), value));
  }

  Param<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("ParamStore: no parameter " + name);
    return it->second;
  }
  const Param<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("ParamStore: no parameter " + name);
    return it->second;
  }
  const Tensor<T>& value(const std::string& name) const { return at(name).value; }
  Tensor<T>& grad(const std::string& name) { return at(name).grad; }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t size() const { return params_.size(); }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [n, p] : params_) out.push_back(n);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& [n, p] : params_) p.grad.fill(T{0});
  }

  void scale_grad(T factor) {
    for (auto& [n, p] : params_)
      for (T& g : p.grad.flat()) g *= factor;
  }

  double grad_norm() const {
    double s = 0.0;
    for (const auto& [n, p] : params_)
      for (T g : p.grad.flat()) s += static_cast<double>(g) * static_cast<double>(g);
    return std::sqrt(s);
  }

  /// Overwrites values from `other`, which must hold exactly the same names
  /// and shapes. Gradients are reset.
  template <class U>
  void assign_values(const ParamStore<U>& other) {
    if (other.size() != params_.size()) {
      throw std::invalid_argument("ParamStore: parameter count mismatch (" +
                                  std::to_string(other.size()) + " vs " +
                                  std::to_string(params_.size()) + ")");
    }
    for (auto& [name, p] : params_) {
      if (!other.contains(name)) throw std::invalid_argument("ParamStore: missing " + name);
      const auto& src = other.at(name).value;
      if (src.shape() != p.value.shape()) {
        throw ShapeError("ParamStore: shape mismatch for " + name);
      }
      for (std::size_t i = 0; i < src.size(); ++i) p.value[i] = static_cast<T>(src[i]);
      p.grad.fill(T{0});
    }
  }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, p] : params_) out.add(name, p.value.template cast<U>());
    return out;
  }

 private:
  Map params_;
};

}  // namespace ziqe::nn
