#pragma once

// Denoising as a multi-step MDP, optimized with the clipped PPO surrogate.
//
// State s_t = (source, instruction, t, x_t), action a_t = x_{t-1}, policy
// density is the sampler's Gaussian transition. Only the final step carries
// a reward.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pixforge/checkpoint.hpp"
#include "pixforge/denoiser.hpp"
#include "pixforge/optim.hpp"
#include "pixforge/reward.hpp"
#include "pixforge/world.hpp"

namespace pixforge::ppo {

struct MdpStep {
  std::size_t t = 0;
  std::vector<double> state;   // x_t
  std::vector<double> action;  // x_{t-1}
  double old_log_prob = 0.0;
  double reward = 0.0;
};

struct Trajectory {
  std::uint64_t triple_seed = 0;
  std::uint64_t noise_seed = 0;
  world::EditTriple triple;
  std::string prompt;
  std::vector<MdpStep> steps;
  reward::RewardBreakdown terminal;
  reward::AggregatedAttention attention;
  Image output;

  double return_sum() const;
};

class PromptStatTracker {
 public:
  PromptStatTracker(std::size_t buffer_size, std::size_t min_count);

  // Pushes the rewards into their prompts' buffers, then normalizes each one
  // by its prompt's buffer statistics when the buffer holds at least
  // min_count values, else by the batch statistics. Std is floored at 1e-6.
  std::vector<double> normalize(std::span<const std::string> prompts, std::span<const double> rewards);

  const std::map<std::string, std::deque<double>>& buffers() const { return buffers_; }
  void restore(std::map<std::string, std::deque<double>> buffers);
  std::size_t buffer_size() const { return buffer_size_; }
  std::size_t min_count() const { return min_count_; }

 private:
  std::size_t buffer_size_;
  std::size_t min_count_;
  std::map<std::string, std::deque<double>> buffers_;
};

struct PpoConfig {
  double clip_range = 1e-4;
  double adv_clip_max = 5.0;
  std::size_t num_inner_epochs = 1;
  std::size_t sample_batch_size = 1;
  std::size_t num_batches_per_epoch = 2;
  std::size_t train_batch_size = 1;
  std::size_t gradient_accumulation_steps = 1;
  double timestep_fraction = 1.0;
  bool cfg = true;
  double guidance_scale = 5.0;

  void validate() const;
  double effective_guidance() const { return cfg ? guidance_scale : 1.0; }
};

struct TrajectorySpec {
  std::uint64_t triple_seed = 0;
  std::uint64_t noise_seed = 0;
};

struct CollectOptions {
  reward::RewardConfig reward;
  world::DifficultyMix difficulty = world::DifficultyMix::mixed;
  double guidance_scale = 5.0;
  // Used when reward.attention_source is frozen_reference.
  const model::ParamSet* reference = nullptr;
};

class CollectError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<Trajectory> collect_trajectories(const model::Denoiser& denoiser, const model::ParamSet& snapshot,
                                             const world::EditWorld& world, std::span<const TrajectorySpec> specs,
                                             const CollectOptions& options);

// Terminal rewards normalized per the tracker, then clipped to +-adv_clip_max.
std::vector<double> compute_advantages(std::span<const Trajectory> trajectories, PromptStatTracker& tracker,
                                       double adv_clip_max);

// Indices into each trajectory's steps, a fraction chosen without replacement.
std::vector<std::vector<std::size_t>> select_timesteps(std::span<const Trajectory> trajectories, double fraction,
                                                       std::uint64_t key);

struct SurrogateResult {
  ad::Tensor objective;  // mean clipped surrogate, to be maximized
  std::size_t terms = 0;
  std::size_t skipped_trajectories = 0;
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  std::vector<double> ratios;
};

struct ClippedTerm {
  ad::Tensor value;  // min(r A, clip(r, 1-eps, 1+eps) A)
  double ratio = 0.0;
};
ClippedTerm clipped_term(const ad::Tensor& log_prob, double old_log_prob, double advantage, double clip_range);

// Rebuilds log p_theta(x_{t-1} | x_t, V, X) with gradients for the selected
// steps and averages min(r A, clip(r, 1-eps, 1+eps) A).
SurrogateResult ppo_surrogate(const model::Denoiser& denoiser, const model::ParamSet& params,
                              std::span<const Trajectory> trajectories, std::span<const double> advantages,
                              const std::vector<std::vector<std::size_t>>& timesteps, double clip_range,
                              double guidance_scale);

struct TrainConfig {
  PpoConfig ppo;
  reward::RewardConfig reward;
  ad::AdamWConfig optimizer;
  std::size_t num_epochs = 200;
  std::size_t save_freq = 50;
  std::size_t num_checkpoint_limit = 5;
  std::uint64_t seed = 42;
  bool use_lora = true;
  std::size_t buffer_size = 16;
  std::size_t min_count = 16;
  world::DifficultyMix difficulty = world::DifficultyMix::mixed;
  // Number of distinct training triples cycled through; 0 draws fresh ones every epoch.
  std::size_t triple_pool = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double mean_reward = 0.0;
  double mean_l_att = 0.0;
  double mean_mae = 0.0;
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
};

std::string metrics_header();
std::string metrics_row(const EpochMetrics& m);

class TrainingHalted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Full resumable training state.
struct TrainState {
  model::ParamSet params;  // live policy; trainable tensors require grad
  ad::AdamWState optimizer;
  std::map<std::string, std::deque<double>> tracker;
  std::size_t epoch = 0;  // last completed epoch
};

model::Checkpoint save_state(const TrainState& state, const model::DenoiserConfig& config);
TrainState load_state(const model::Checkpoint& ckpt, const model::DenoiserConfig& config, bool use_lora);

struct TrainOutputs {
  // When set, metrics.csv, checkpoints/epoch_NNNN.ckpt and final.ckpt go here.
  std::optional<std::filesystem::path> run_dir;
  std::function<void(const EpochMetrics&)> on_epoch;
};

class Trainer {
 public:
  Trainer(const model::Denoiser& denoiser, const world::EditWorld& world, TrainConfig config);

  // Fresh state from pretrained weights (LoRA attached when enabled).
  TrainState initial_state(const model::ParamSet& pretrained) const;

  // Runs epochs state.epoch+1 .. num_epochs. `reference` is the frozen
  // pretrained model used when attention comes from it.
  std::vector<EpochMetrics> train(TrainState& state, const model::ParamSet& reference, const TrainOutputs& outputs) const;

  // One epoch; exposed for tests.
  EpochMetrics run_epoch(TrainState& state, ad::AdamW& optimizer, PromptStatTracker& tracker,
                         const model::ParamSet& reference, std::size_t epoch) const;

  std::vector<TrajectorySpec> epoch_specs(std::size_t epoch) const;
  const TrainConfig& config() const { return config_; }

 private:
  const model::Denoiser& denoiser_;
  const world::EditWorld& world_;
  TrainConfig config_;
};

}  // namespace pixforge::ppo
