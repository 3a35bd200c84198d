#pragma once

// Conditional noise predictor with cross-attention over instruction tokens,
// plus the stochastic DDIM sampler built on it.
//
// Latents live in pixel space scaled to [-1, 1]. Sampler step t in [0, T)
// moves from noise level t+1 to level t; level 0 is the (almost) clean end.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pixforge/autodiff.hpp"
#include "pixforge/image.hpp"
#include "pixforge/world.hpp"

namespace pixforge::model {

struct DenoiserConfig {
  std::size_t image_size = 16;
  std::size_t channels = 1;
  std::size_t patch = 4;
  std::size_t width = 32;
  std::size_t heads = 2;
  std::size_t blocks = 2;
  std::size_t ff_mult = 2;
  std::size_t vocab_size = 18;
  std::size_t max_tokens = 8;
  std::size_t num_steps = 10;
  std::size_t lora_rank = 4;
  double lora_scale = 1.0;

  std::size_t grid() const { return image_size / patch; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return patch * patch * channels; }
  std::size_t latent_size() const { return image_size * image_size * channels; }
  void validate() const;
};

struct NoiseSchedule {
  // alpha_bar[k] for noise levels k = 0..T, strictly decreasing.
  std::vector<double> alpha_bar;
  double eta = 1.0;

  // Log-SNR linear from +9 at level 0 to -6 at level T.
  static NoiseSchedule linear_log_snr(std::size_t steps, double eta);

  std::size_t steps() const { return alpha_bar.size() - 1; }
  // Std of the transition at sampler step t (level t+1 -> t).
  double transition_std(std::size_t t) const;
  // mean = x_coef * x_t + eps_coef * eps
  double mean_x_coef(std::size_t t) const;
  double mean_eps_coef(std::size_t t) const;
};

// Named, ordered parameter tensors.
class ParamSet {
 public:
  void add(std::string name, ad::Tensor tensor);
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  const ad::Tensor& get(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }

  // Deep copy. Tensors whose names satisfy `trainable` require grad.
  ParamSet clone(const std::function<bool(const std::string&)>& trainable) const;
  ParamSet frozen_copy() const {
    return clone([](const std::string&) { return false; });
  }
  std::vector<ad::Tensor> trainable() const;
  std::size_t total_values() const;
  void zero_grad();

  friend bool bitwise_equal(const ParamSet& a, const ParamSet& b);

 private:
  std::vector<std::string> names_;
  std::vector<ad::Tensor> tensors_;
  std::map<std::string, std::size_t> index_;
};

bool is_lora_param(const std::string& name);

// Fresh weights (float-representable). LoRA A factors are random, B zero.
ParamSet init_params(const DenoiserConfig& config, std::uint64_t seed, bool with_lora);
// Adds zero-effect LoRA factors to a set that has none.
void attach_lora(ParamSet& params, const DenoiserConfig& config, std::uint64_t seed);

// Cross-attention weights (pixels x tokens, heads averaged) for one block.
using AttentionBlock = std::vector<double>;

struct StepOutput {
  ad::Tensor eps;   // predicted noise, latent layout
  ad::Tensor mean;  // transition mean
  double stddev = 0.0;
  std::vector<AttentionBlock> attention;  // one per cross-attention block
};

struct StepRecord {
  std::size_t t = 0;
  std::vector<double> state;   // x_t
  std::vector<double> action;  // x_{t-1}
  double log_prob = 0.0;
  std::vector<AttentionBlock> attention;
};

struct Rollout {
  std::vector<StepRecord> steps;  // in sampling order, t = T-1 .. 0
  std::vector<double> final_latent;
  Image output;
};

struct SampledStep {
  std::vector<double> next;
  double log_prob = 0.0;
};

class RolloutError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Denoiser {
 public:
  Denoiser(DenoiserConfig config, NoiseSchedule schedule);

  const DenoiserConfig& config() const { return config_; }
  const NoiseSchedule& schedule() const { return schedule_; }

  // Checks every tensor name and shape the forward pass needs.
  void check_params(const ParamSet& params) const;

  StepOutput predict(const ParamSet& params, std::span<const double> x_t, std::size_t t, const Image& source,
                     const world::Instruction& instruction) const;

  // eps = eps_uncond + s (eps_cond - eps_uncond); attention from the
  // conditional branch only. s == 1 skips the unconditional pass.
  StepOutput guided_predict(const ParamSet& params, std::span<const double> x_t, std::size_t t, const Image& source,
                            const world::Instruction& instruction, double guidance_scale) const;

  // x_{t-1} = mean + std * noise, with its exact diagonal-Gaussian log-density.
  static SampledStep sample_step(const StepOutput& out, std::span<const double> noise);

  Rollout rollout(const ParamSet& params, const Image& source, const world::Instruction& instruction,
                  std::uint64_t seed, double guidance_scale) const;

  std::vector<double> encode(const Image& image) const;
  Image decode(std::span<const double> latent) const;

  // Noise draws used by rollout for a given seed.
  static std::vector<double> initial_noise(std::uint64_t seed, std::size_t n);
  static std::vector<double> step_noise(std::uint64_t seed, std::size_t t, std::size_t n);

 private:
  struct Forward {
    ad::Tensor eps;
    std::vector<AttentionBlock> attention;
  };
  Forward forward(const ParamSet& params, std::span<const double> x_t, std::size_t t, const Image& source,
                  const world::Instruction& instruction) const;
  StepOutput finish(Forward fwd, std::span<const double> x_t, std::size_t t) const;

  DenoiserConfig config_;
  NoiseSchedule schedule_;
  std::vector<std::size_t> patch_index_;  // patch layout -> latent index
  std::vector<std::size_t> latent_index_;  // latent layout -> patch index
};

// Differentiable diagonal-Gaussian log-density summed over coordinates.
ad::Tensor gaussian_log_prob(std::span<const double> x, const ad::Tensor& mean, double stddev);

}  // namespace pixforge::model
