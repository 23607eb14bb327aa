#pragma once

#include <cstdint>
#include <vector>

#include "cbodd/tensor.hpp"

namespace cbodd {

struct AdamConfig {
  double learning_rate = 1e-2;
  /// Decoupled: p -= lr * weight_decay * p, applied alongside the Adam step.
  double weight_decay = 1e-4;
  /// Epochs between learning-rate decays.
  std::uint32_t step_size = 5;
  double decay_factor = 0.5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

/// Adam with decoupled weight decay and a step learning-rate schedule.
/// Moment buffers mirror the parameter shapes.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config);

  /// Applies one update from the current gradients. Throws StateError if a
  /// parameter carries no gradient buffer.
  void step();
  void zero_grad();
  /// Signals an epoch boundary; decays the learning rate every step_size epochs.
  void end_epoch();

  double current_lr() const { return lr_; }
  std::uint64_t step_count() const { return steps_; }
  std::uint64_t epoch_count() const { return epochs_; }
  const AdamConfig& config() const { return config_; }
  const std::vector<double>& first_moment(std::size_t i) const { return m_.at(i); }
  const std::vector<double>& second_moment(std::size_t i) const { return v_.at(i); }

 private:
  std::vector<Tensor> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  double lr_;
  std::uint64_t steps_ = 0;
  std::uint64_t epochs_ = 0;
};

}  // namespace cbodd
