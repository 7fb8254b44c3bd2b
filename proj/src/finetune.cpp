#include "ziqe/finetune.hpp"

#include <cmath>
#include <stdexcept>

namespace ziqe::qe {

template <class T>
QeTrainer<T>::QeTrainer(QeModel<T>& model, FinetuneOptions options)
    : model_(model), options_(options), backbone_opt_(options.adam), head_opt_(options.adam) {}

template <class T>
double QeTrainer<T>::compute_gradients(std::span<const QeExample<T>> batch) {
  if (batch.empty()) throw std::invalid_argument("finetune: empty batch");
  model_.zero_grad();
  const double scale = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& ex : batch) {
    total += model_.accumulate(*ex.features, ex.hypothesis, ex.wer, scale,
                               !options_.freeze_backbone);
  }
  return total * scale;
}

template <class T>
double QeTrainer<T>::compute_gradients_states(std::span<const Tensor<T>* const> states,
                                              std::span<const double> wers) {
  if (states.empty()) throw std::invalid_argument("finetune: empty batch");
  if (states.size() != wers.size()) throw std::invalid_argument("finetune: batch size mismatch");
  model_.head().params().zero_grad();
  const double scale = 1.0 / static_cast<double>(states.size());
  double total = 0.0;
  for (std::size_t i = 0; i < states.size(); ++i) {
    total += model_.accumulate_states(*states[i], wers[i], scale);
  }
  return total * scale;
}

template <class T>
void QeTrainer<T>::apply_update(bool backbone) {
  auto& head = model_.head().params();
  auto& bert = model_.backbone().params();
  if (options_.grad_clip > 0.0) {
    double sq = head.grad_norm();
    sq *= sq;
    if (backbone) {
      const double b = bert.grad_norm();
      sq += b * b;
    }
    const double norm = std::sqrt(sq);
    if (norm > options_.grad_clip) {
      const T f = static_cast<T>(options_.grad_clip / norm);
      head.scale_grad(f);
      if (backbone) bert.scale_grad(f);
    }
  }
  head_opt_.step(head);
  if (backbone) backbone_opt_.step(bert);
}

template <class T>
double QeTrainer<T>::step(std::span<const QeExample<T>> batch) {
  const double loss = compute_gradients(batch);
  if (!std::isfinite(loss)) throw std::domain_error("finetune: non-finite loss");
  apply_update(!options_.freeze_backbone);
  return loss;
}

template <class T>
double QeTrainer<T>::step_states(std::span<const Tensor<T>* const> states,
                                 std::span<const double> wers) {
  const double loss = compute_gradients_states(states, wers);
  if (!std::isfinite(loss)) throw std::domain_error("finetune: non-finite loss");
  apply_update(false);
  return loss;
}

template class QeTrainer<float>;
template class QeTrainer<double>;

}  // namespace ziqe::qe
