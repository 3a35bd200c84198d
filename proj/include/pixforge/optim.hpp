#pragma once

#include <cstddef>
#include <vector>

#include "pixforge/autodiff.hpp"

namespace pixforge::ad {

struct AdamWConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;
  double max_grad_norm = 1.0;
  // Round parameters and moments to float after each step so that they
  // survive a checkpoint round trip unchanged.
  bool round_to_float = true;
};

struct AdamWState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::size_t step = 0;
};

struct StepReport {
  bool applied = false;
  double grad_norm = 0.0;  // before clipping
  double clip_coefficient = 1.0;
};

// Scales all gradients in place so their joint L2 norm is at most max_norm.
// Returns the norm before scaling.
double clip_grad_norm(std::vector<std::vector<double>>& grads, double max_norm);

class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig config);

  // Reads grads from the parameters. A non-finite gradient rejects the step:
  // parameters, moments and the step counter stay untouched.
  StepReport step();
  // Same update with explicitly supplied gradients.
  StepReport step(std::vector<std::vector<double>> grads);

  void zero_grad();

  const AdamWConfig& config() const { return config_; }
  void set_learning_rate(double lr);
  const AdamWState& state() const { return state_; }
  void load_state(AdamWState state);
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamWConfig config_;
  AdamWState state_;
};

}  // namespace pixforge::ad
