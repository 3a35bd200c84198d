#pragma once

// Supervised denoising pretraining on golden edits, so that RL starts from a
// model that already edits.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "pixforge/denoiser.hpp"
#include "pixforge/world.hpp"

namespace pixforge::model {

struct PretrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 8;
  double learning_rate = 1e-3;
  // Cosine decay from learning_rate to learning_rate * final_lr_fraction.
  double final_lr_fraction = 0.1;
  double weight_decay = 1e-4;
  double max_grad_norm = 1.0;
  // Probability of replacing the instruction with the null instruction.
  double cond_dropout = 0.1;
  std::uint64_t seed = 42;
  world::DifficultyMix difficulty = world::DifficultyMix::mixed;
};

struct PretrainResult {
  ParamSet params;
  std::vector<double> losses;  // one per optimizer step
};

class PretrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Noise-prediction MSE on golden edits. LoRA factors, if present, are left
// untouched. Throws PretrainError on a non-finite loss.
PretrainResult pretrain(const Denoiser& denoiser, const ParamSet& init, const world::EditWorld& world,
                        const PretrainConfig& config,
                        const std::function<void(std::size_t, double)>& progress = {});

// Same loss over fixed seeds with noise and level derived from each seed.
double heldout_denoising_loss(const Denoiser& denoiser, const ParamSet& params, const world::EditWorld& world,
                              std::span<const std::uint64_t> seeds, world::DifficultyMix difficulty);

// Seeds for training-time triples, drawn from a space disjoint from held-out seeds.
std::uint64_t training_seed(std::uint64_t run_seed, std::initializer_list<std::uint64_t> path);
std::uint64_t heldout_seed(std::size_t index);

}  // namespace pixforge::model
