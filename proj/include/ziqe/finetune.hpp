#pragma once

#include <span>
#include <vector>

#include "ziqe/nn/adam.hpp"
#include "ziqe/qe_model.hpp"

namespace ziqe::qe {

/// One training example as seen by the trainer: stacked features, the ASR
/// hypothesis and its WER label.
template <class T>
struct QeExample {
  const Tensor<T>* features = nullptr;
  std::span<const TokenId> hypothesis;
  double wer = 0.0;
};

struct FinetuneOptions {
  nn::AdamConfig adam{1e-3};
  /// Global L2 clip over backbone and head gradients together; 0 disables.
  double grad_clip = 1.0;
  bool freeze_backbone = false;
};

/// Mini-batch fine-tuning. Each step averages per-sample losses over the
/// batch; the gate term comes from every sample, the continuous term only
/// from samples with WER > 0.
template <class T>
class QeTrainer {
 public:
  QeTrainer(QeModel<T>& model, FinetuneOptions options);

  /// Zeroes gradients and accumulates the batch-mean gradient; returns the
  /// mean loss. Throws std::invalid_argument on an empty batch.
  double compute_gradients(std::span<const QeExample<T>> batch);
  /// compute_gradients, clip, then one Adam update (head only when frozen).
  double step(std::span<const QeExample<T>> batch);

  /// Head-only variants over precomputed backbone features.
  double compute_gradients_states(std::span<const Tensor<T>* const> states,
                                  std::span<const double> wers);
  double step_states(std::span<const Tensor<T>* const> states, std::span<const double> wers);

  const FinetuneOptions& options() const { return options_; }

 private:
  void apply_update(bool backbone);

  QeModel<T>& model_;
  FinetuneOptions options_;
  nn::Adam<T> backbone_opt_;
  nn::Adam<T> head_opt_;
};

/// Free-function form: one step of `trainer` on `batch`.
template <class T>
double finetune_step(QeTrainer<T>& trainer, std::span<const QeExample<T>> batch) {
  return trainer.step(batch);
}

}  // namespace ziqe::qe
