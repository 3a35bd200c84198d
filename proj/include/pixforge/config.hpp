#pragma once

// Flat `key = value` run configuration. Keys follow the training-details
// table (an optional leading "config." is accepted); artifact-local keys
// cover the world, model geometry, reward and pretraining.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pixforge/denoiser.hpp"
#include "pixforge/metrics.hpp"
#include "pixforge/ppo.hpp"
#include "pixforge/pretrain.hpp"
#include "pixforge/world.hpp"

namespace pixforge::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::uint64_t seed = 42;
  std::string logdir = "logs";
  std::size_t num_epochs = 200;
  std::size_t save_freq = 50;
  std::size_t num_checkpoint_limit = 5;
  std::string mixed_precision = "no";
  bool allow_tf32 = true;  // accepted, no effect on CPU
  std::string resume_from;
  bool use_lora = true;

  std::size_t sample_num_steps = 50;
  double sample_eta = 1.0;
  double sample_guidance_scale = 5.0;
  std::size_t sample_batch_size = 1;
  std::size_t sample_num_batches_per_epoch = 2;

  std::size_t train_batch_size = 1;
  bool train_use_8bit_adam = false;
  double train_learning_rate = 2e-4;
  double train_adam_beta1 = 0.9;
  double train_adam_beta2 = 0.999;
  double train_adam_weight_decay = 1e-4;
  double train_adam_epsilon = 1e-8;
  std::size_t train_gradient_accumulation_steps = 1;
  double train_max_grad_norm = 1.0;
  std::size_t train_num_inner_epochs = 1;
  bool train_cfg = true;
  double train_adv_clip_max = 5.0;
  double train_clip_range = 1e-4;
  double train_timestep_fraction = 1.0;
  std::size_t train_triple_pool = 0;

  std::size_t stat_buffer_size = 16;
  std::size_t stat_min_count = 16;

  std::size_t world_size = 16;
  std::string world_difficulty = "mixed";
  std::size_t world_max_tokens = 8;

  std::size_t model_patch = 4;
  std::size_t model_width = 32;
  std::size_t model_heads = 2;
  std::size_t model_blocks = 2;
  std::size_t model_ff_mult = 2;
  std::size_t model_lora_rank = 4;
  double model_lora_scale = 1.0;

  double reward_tau = 0.05;
  double reward_alpha = -1.0;
  bool reward_include_attention = true;
  std::string reward_attention_source = "policy";

  std::size_t pretrain_steps = 2000;
  std::size_t pretrain_batch_size = 8;
  double pretrain_learning_rate = 1e-3;
  double pretrain_cond_dropout = 0.1;
  // Empty means <logdir>/pretrain/pretrained.ckpt.
  std::string pretrained;

  std::size_t eval_holdout = 32;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Parses `key = value` lines; '#' starts a comment. Unknown keys, duplicate
// keys and malformed values raise ConfigError naming the key and line.
RunConfig parse(const std::string& text, const std::string& origin = "<config>");
RunConfig load(const std::filesystem::path& path);
// Every key with its resolved value, in a form parse() reads back.
std::string manifest(const RunConfig& config);
std::vector<std::string> known_keys();
// Sets one key from text, as a config line would.
void set_value(RunConfig& config, const std::string& key, const std::string& value);

void validate(const RunConfig& config);
// PIXFORGE_LOGDIR overrides logdir when set and non-empty.
void apply_environment(RunConfig& config);

model::DenoiserConfig denoiser_config(const RunConfig& config);
model::NoiseSchedule noise_schedule(const RunConfig& config);
world::WorldConfig world_config(const RunConfig& config);
model::PretrainConfig pretrain_config(const RunConfig& config);
ppo::TrainConfig train_config(const RunConfig& config);
std::filesystem::path pretrained_path(const RunConfig& config);

}  // namespace pixforge::config
