#include "pixforge/pretrain.hpp"

#include <cmath>
#include <numbers>

#include "pixforge/optim.hpp"

namespace pixforge::model {

namespace {

constexpr std::uint64_t kHeldoutBase = 1ULL << 40;
constexpr std::uint64_t kPretrainTag = 0x70726574ULL;

struct NoisedExample {
  std::vector<double> x_t;
  std::vector<double> noise;
  std::size_t t;
};

NoisedExample noise_example(const Denoiser& d, const std::vector<double>& clean, std::uint64_t key) {
  ad::CounterRng rng(key);
  NoisedExample ex;
  ex.t = static_cast<std::size_t>(rng.bits(0) % d.config().num_steps);
  ad::CounterRng noise_rng(ad::mix64(key ^ 0x6e6f697365ULL));
  ex.noise = noise_rng.normals(clean.size());
  double ab = d.schedule().alpha_bar[ex.t + 1];
  ex.x_t.resize(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i)
    ex.x_t[i] = std::sqrt(ab) * clean[i] + std::sqrt(1.0 - ab) * ex.noise[i];
  return ex;
}

ad::Tensor example_loss(const Denoiser& d, const ParamSet& params, const world::EditSample& s,
                        const NoisedExample& ex, const world::Instruction& instruction) {
  StepOutput out = d.predict(params, ex.x_t, ex.t, s.triple.source, instruction);
  ad::Tensor target = ad::Tensor::from({ex.noise.size()}, ex.noise);
  return ad::mean(ad::square(ad::sub(out.eps, target)));
}

}  // namespace

std::uint64_t training_seed(std::uint64_t run_seed, std::initializer_list<std::uint64_t> path) {
  return ad::derive_key(run_seed, path) % kHeldoutBase;
}

std::uint64_t heldout_seed(std::size_t index) { return kHeldoutBase + index; }

PretrainResult pretrain(const Denoiser& denoiser, const ParamSet& init, const world::EditWorld& world,
                        const PretrainConfig& config, const std::function<void(std::size_t, double)>& progress) {
  PretrainResult result;
  result.params = init.clone([](const std::string& name) { return !is_lora_param(name); });
  if (config.steps == 0) {
    result.params = result.params.frozen_copy();
    return result;
  }
  denoiser.check_params(result.params);
  ad::AdamWConfig opt_config;
  opt_config.learning_rate = config.learning_rate;
  opt_config.weight_decay = config.weight_decay;
  opt_config.max_grad_norm = config.max_grad_norm;
  ad::AdamW optimizer(result.params.trainable(), opt_config);
  const std::size_t max_tokens = world.config().max_tokens;

  for (std::size_t step = 0; step < config.steps; ++step) {
    const double progress_frac = static_cast<double>(step) / static_cast<double>(config.steps);
    const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress_frac));
    optimizer.set_learning_rate(config.learning_rate *
                                (config.final_lr_fraction + (1.0 - config.final_lr_fraction) * cosine));
    optimizer.zero_grad();
    std::vector<ad::Tensor> losses;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      std::uint64_t seed = training_seed(config.seed, {kPretrainTag, step, b});
      world::EditSample s = world.sample(seed, world::difficulty_for(config.difficulty, seed));
      std::uint64_t key = ad::derive_key(config.seed, {kPretrainTag, step, b, 1});
      NoisedExample ex = noise_example(denoiser, denoiser.encode(s.golden), key);
      bool drop = ad::CounterRng(key).uniform(7) <= config.cond_dropout;
      world::Instruction instruction = drop ? world::Instruction::null(max_tokens) : s.triple.instruction;
      losses.push_back(example_loss(denoiser, result.params, s, ex, instruction));
    }
    ad::Tensor total = losses[0];
    for (std::size_t i = 1; i < losses.size(); ++i) total = ad::add(total, losses[i]);
    ad::Tensor loss = ad::scale(total, 1.0 / static_cast<double>(losses.size()));
    double value = loss.item();
    if (!std::isfinite(value))
      throw PretrainError("pretraining diverged at step " + std::to_string(step) + " (loss is not finite)");
    ad::backward(loss);
    optimizer.step();
    result.losses.push_back(value);
    if (progress) progress(step, value);
  }
  result.params = result.params.frozen_copy();
  return result;
}

double heldout_denoising_loss(const Denoiser& denoiser, const ParamSet& params, const world::EditWorld& world,
                              std::span<const std::uint64_t> seeds, world::DifficultyMix difficulty) {
  if (seeds.empty()) throw std::invalid_argument("heldout_denoising_loss: no seeds");
  ad::NoGradGuard guard;
  double total = 0.0;
  for (std::uint64_t seed : seeds) {
    world::EditSample s = world.sample(seed, world::difficulty_for(difficulty, seed));
    NoisedExample ex = noise_example(denoiser, denoiser.encode(s.golden), ad::derive_key(seed, {kPretrainTag}));
    total += example_loss(denoiser, params, s, ex, s.triple.instruction).item();
  }
  return total / static_cast<double>(seeds.size());
}

}  // namespace pixforge::model
