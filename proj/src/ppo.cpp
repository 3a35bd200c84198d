#include "pixforge/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "pixforge/log.hpp"
#include "pixforge/pretrain.hpp"
#include "pixforge/text.hpp"

namespace pixforge::ppo {

namespace {

constexpr std::uint64_t kTripleTag = 0x7070'6f74ULL;
constexpr std::uint64_t kNoiseTag = 0x7070'6f6eULL;
constexpr std::uint64_t kLoraTag = 0x6c6f'7261ULL;
constexpr std::uint64_t kOrderTag = 0x6f72'6472ULL;
constexpr std::uint64_t kTimestepTag = 0x7473'7465ULL;

struct Stats {
  double mean = 0.0;
  double std = 0.0;
};

Stats stats_of(const std::vector<double>& v) {
  Stats s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(var / static_cast<double>(v.size()));
  return s;
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t key) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  ad::CounterRng rng(key);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.next_index(i)]);
  return idx;
}

std::string checkpoint_name(std::size_t epoch) {
  std::string digits = std::to_string(epoch);
  if (digits.size() < 4) digits.insert(0, 4 - digits.size(), '0');
  return "epoch_" + digits + ".ckpt";
}

void prune_checkpoints(const std::filesystem::path& dir, std::size_t limit) {
  std::vector<std::filesystem::path> found;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("epoch_", 0) == 0 && entry.path().extension() == ".ckpt") found.push_back(entry.path());
  }
  std::sort(found.begin(), found.end());
  while (found.size() > limit) {
    std::filesystem::remove(found.front());
    std::filesystem::remove(model::manifest_path(found.front()));
    found.erase(found.begin());
  }
}

// Keeps the header and rows for epochs <= last_epoch.
void reset_metrics_file(const std::filesystem::path& path, std::size_t last_epoch) {
  std::vector<std::string> kept;
  if (last_epoch > 0 && std::filesystem::exists(path)) {
    std::ifstream in(path);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      if (first) {
        first = false;
        continue;
      }
      if (line.empty()) continue;
      auto fields = split(line, ',');
      if (!fields.empty() && static_cast<std::size_t>(parse_number(fields[0])) <= last_epoch) kept.push_back(line);
    }
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << metrics_header() << '\n';
  for (const auto& line : kept) out << line << '\n';
}

}  // namespace

double Trajectory::return_sum() const {
  double s = 0.0;
  for (const auto& step : steps) s += step.reward;
  return s;
}

PromptStatTracker::PromptStatTracker(std::size_t buffer_size, std::size_t min_count)
    : buffer_size_(buffer_size), min_count_(min_count) {
  if (buffer_size == 0) throw std::invalid_argument("PromptStatTracker: buffer_size must be positive");
}

std::vector<double> PromptStatTracker::normalize(std::span<const std::string> prompts,
                                                 std::span<const double> rewards) {
  if (prompts.size() != rewards.size())
    throw std::invalid_argument("PromptStatTracker: prompts and rewards differ in length");
  // Buffers hold float-rounded rewards so checkpoints restore them exactly;
  // normalize those same values so equal rewards give exactly zero.
  std::vector<double> batch(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) batch[i] = static_cast<double>(static_cast<float>(rewards[i]));
  const Stats global = stats_of(batch);

  std::map<std::string, std::vector<double>> grouped;
  for (std::size_t i = 0; i < prompts.size(); ++i) grouped[prompts[i]].push_back(batch[i]);
  std::map<std::string, Stats> per_prompt;
  for (const auto& [prompt, values] : grouped) {
    auto& buf = buffers_[prompt];
    for (double v : values) {
      buf.push_back(v);
      if (buf.size() > buffer_size_) buf.pop_front();
    }
    if (buf.size() >= min_count_) per_prompt[prompt] = stats_of(std::vector<double>(buf.begin(), buf.end()));
    else per_prompt[prompt] = global;
  }

  std::vector<double> out(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    const Stats& s = per_prompt[prompts[i]];
    out[i] = (batch[i] - s.mean) / std::max(s.std, 1e-6);
  }
  return out;
}

void PromptStatTracker::restore(std::map<std::string, std::deque<double>> buffers) {
  for (auto& [prompt, buf] : buffers)
    while (buf.size() > buffer_size_) buf.pop_front();
  buffers_ = std::move(buffers);
}

void PpoConfig::validate() const {
  if (!(clip_range >= 0.0)) throw std::invalid_argument("clip_range must be nonnegative");
  if (!(adv_clip_max > 0.0)) throw std::invalid_argument("adv_clip_max must be positive");
  if (num_inner_epochs == 0) throw std::invalid_argument("num_inner_epochs must be positive");
  if (sample_batch_size == 0 || num_batches_per_epoch == 0)
    throw std::invalid_argument("sample batch size and batch count must be positive");
  if (train_batch_size == 0) throw std::invalid_argument("train batch size must be positive");
  if (gradient_accumulation_steps == 0) throw std::invalid_argument("gradient_accumulation_steps must be positive");
  if (!(timestep_fraction > 0.0 && timestep_fraction <= 1.0))
    throw std::invalid_argument("timestep_fraction must lie in (0, 1]");
  if (!std::isfinite(guidance_scale)) throw std::invalid_argument("guidance_scale must be finite");
}

std::vector<Trajectory> collect_trajectories(const model::Denoiser& denoiser, const model::ParamSet& snapshot,
                                             const world::EditWorld& world, std::span<const TrajectorySpec> specs,
                                             const CollectOptions& options) {
  ad::NoGradGuard guard;
  const std::size_t grid = denoiser.config().grid();
  const bool from_reference = options.reward.attention_source == reward::AttentionSource::frozen_reference;
  if (from_reference && options.reference == nullptr)
    throw std::invalid_argument("collect_trajectories: frozen_reference attention needs a reference model");

  std::vector<Trajectory> out;
  out.reserve(specs.size());
  for (const auto& spec : specs) {
    world::EditSample sample = world.sample(spec.triple_seed, world::difficulty_for(options.difficulty, spec.triple_seed));
    const auto& triple = sample.triple;
    model::Rollout rollout;
    try {
      rollout = denoiser.rollout(snapshot, triple.source, triple.instruction, spec.noise_seed, options.guidance_scale);
    } catch (const model::RolloutError& e) {
      throw CollectError("triple seed " + std::to_string(spec.triple_seed) + ": " + e.what());
    }

    reward::AttentionRecord record;
    record.reserve(rollout.steps.size());
    for (const auto& step : rollout.steps) {
      if (from_reference) {
        model::StepOutput ref = denoiser.predict(*options.reference, step.state, step.t, triple.source, triple.instruction);
        record.push_back(std::move(ref.attention));
      } else {
        record.push_back(step.attention);
      }
    }

    Trajectory traj;
    traj.triple_seed = spec.triple_seed;
    traj.noise_seed = spec.noise_seed;
    traj.prompt = triple.instruction.text(world.vocabulary());
    traj.attention = reward::aggregate_attention(record, triple.instruction.relevant, grid, grid);
    world::AttentionMap gt = world::mask_to_groundtruth_attention(triple.mask, grid, grid);
    traj.terminal = reward::compute_reward(options.reward, gt, traj.attention, triple.source, rollout.output);
    traj.output = std::move(rollout.output);
    traj.steps.reserve(rollout.steps.size());
    for (auto& step : rollout.steps)
      traj.steps.push_back({step.t, std::move(step.state), std::move(step.action), step.log_prob, 0.0});
    if (!traj.steps.empty()) traj.steps.back().reward = traj.terminal.total;
    traj.triple = triple;
    out.push_back(std::move(traj));
  }
  return out;
}

std::vector<double> compute_advantages(std::span<const Trajectory> trajectories, PromptStatTracker& tracker,
                                       double adv_clip_max) {
  std::vector<std::string> prompts;
  std::vector<double> rewards;
  for (const auto& t : trajectories) {
    prompts.push_back(t.prompt);
    rewards.push_back(t.terminal.total);
  }
  std::vector<double> adv = tracker.normalize(prompts, rewards);
  for (double& a : adv) a = std::clamp(a, -adv_clip_max, adv_clip_max);
  return adv;
}

std::vector<std::vector<std::size_t>> select_timesteps(std::span<const Trajectory> trajectories, double fraction,
                                                       std::uint64_t key) {
  std::vector<std::vector<std::size_t>> out;
  out.reserve(trajectories.size());
  for (std::size_t j = 0; j < trajectories.size(); ++j) {
    const std::size_t n = trajectories[j].steps.size();
    std::size_t k = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))),
                                            n == 0 ? 0 : 1, n);
    std::vector<std::size_t> idx = permutation(n, ad::derive_key(key, {j}));
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    out.push_back(std::move(idx));
  }
  return out;
}

ClippedTerm clipped_term(const ad::Tensor& log_prob, double old_log_prob, double advantage, double clip_range) {
  ad::Tensor ratio = ad::exp(ad::add_scalar(log_prob, -old_log_prob));
  ad::Tensor unclipped = ad::scale(ratio, advantage);
  ad::Tensor clipped = ad::scale(ad::clamp(ratio, 1.0 - clip_range, 1.0 + clip_range), advantage);
  return {ad::minimum(unclipped, clipped), ratio.item()};
}

SurrogateResult ppo_surrogate(const model::Denoiser& denoiser, const model::ParamSet& params,
                              std::span<const Trajectory> trajectories, std::span<const double> advantages,
                              const std::vector<std::vector<std::size_t>>& timesteps, double clip_range,
                              double guidance_scale) {
  if (trajectories.size() != advantages.size() || trajectories.size() != timesteps.size())
    throw std::invalid_argument("ppo_surrogate: trajectories, advantages and timesteps differ in length");
  SurrogateResult result;
  std::optional<ad::Tensor> total;
  std::size_t clipped = 0;
  double ratio_sum = 0.0;

  for (std::size_t j = 0; j < trajectories.size(); ++j) {
    const Trajectory& traj = trajectories[j];
    const double adv = advantages[j];
    std::vector<ad::Tensor> terms;
    std::vector<double> ratios;
    bool finite = true;
    for (std::size_t idx : timesteps[j]) {
      if (idx >= traj.steps.size()) throw std::out_of_range("ppo_surrogate: timestep index out of range");
      const MdpStep& step = traj.steps[idx];
      model::StepOutput out =
          denoiser.guided_predict(params, step.state, step.t, traj.triple.source, traj.triple.instruction, guidance_scale);
      ad::Tensor log_prob = model::gaussian_log_prob(step.action, out.mean, out.stddev);
      ClippedTerm term = clipped_term(log_prob, step.old_log_prob, adv, clip_range);
      if (!std::isfinite(term.ratio)) {
        finite = false;
        break;
      }
      terms.push_back(term.value);
      ratios.push_back(term.ratio);
    }
    if (!finite) {
      ++result.skipped_trajectories;
      logger()->warn("ppo: skipping trajectory {} with a non-finite probability ratio", traj.triple_seed);
      continue;
    }
    for (std::size_t i = 0; i < terms.size(); ++i) {
      total = total ? ad::add(*total, terms[i]) : terms[i];
      ratio_sum += ratios[i];
      if (std::abs(ratios[i] - 1.0) > clip_range) ++clipped;
      result.ratios.push_back(ratios[i]);
    }
    result.terms += terms.size();
  }

  if (result.terms == 0) {
    result.objective = ad::Tensor::scalar(0.0);
    return result;
  }
  const double n = static_cast<double>(result.terms);
  result.objective = ad::scale(*total, 1.0 / n);
  result.mean_ratio = ratio_sum / n;
  result.clip_fraction = static_cast<double>(clipped) / n;
  return result;
}

std::string metrics_header() { return "epoch,mean_reward,mean_l_att,mean_mae,mean_ratio,clip_fraction,grad_norm"; }

std::string metrics_row(const EpochMetrics& m) {
  std::ostringstream os;
  os << m.epoch << ',' << format_number(m.mean_reward) << ',' << format_number(m.mean_l_att) << ','
     << format_number(m.mean_mae) << ',' << format_number(m.mean_ratio) << ',' << format_number(m.clip_fraction)
     << ',' << format_number(m.grad_norm);
  return os.str();
}

model::Checkpoint save_state(const TrainState& state, const model::DenoiserConfig& config) {
  model::Checkpoint ckpt;
  model::store_model_config(ckpt, config);
  model::store_params(ckpt, state.params);
  std::vector<std::string> trainable;
  for (const auto& name : state.params.names())
    if (state.params.get(name).requires_grad()) trainable.push_back(name);
  if (!state.optimizer.first_moment.empty()) {
    if (state.optimizer.first_moment.size() != trainable.size())
      throw std::invalid_argument("save_state: optimizer state does not match the trainable parameters");
    for (std::size_t i = 0; i < trainable.size(); ++i) {
      const auto& shape = state.params.get(trainable[i]).shape();
      ckpt.add("adam/m/" + trainable[i], shape, state.optimizer.first_moment[i]);
      ckpt.add("adam/v/" + trainable[i], shape, state.optimizer.second_moment[i]);
    }
  }
  const double step = static_cast<double>(state.optimizer.step);
  ckpt.add("adam/step", {1}, std::span<const double>(&step, 1));
  const double epoch = static_cast<double>(state.epoch);
  ckpt.add("meta/epoch", {1}, std::span<const double>(&epoch, 1));
  for (const auto& [prompt, buf] : state.tracker) {
    std::vector<double> values(buf.begin(), buf.end());
    ckpt.add("tracker/" + prompt, {values.size()}, values);
  }
  return ckpt;
}

TrainState load_state(const model::Checkpoint& ckpt, const model::DenoiserConfig& config, bool use_lora) {
  model::check_model_config(ckpt, config);
  TrainState state;
  model::ParamSet restored = model::restore_params(ckpt);
  bool has_lora = false;
  for (const auto& name : restored.names()) has_lora = has_lora || model::is_lora_param(name);
  if (use_lora && !has_lora) throw model::CheckpointError("checkpoint has no LoRA factors to resume");
  state.params = restored.clone([use_lora](const std::string& name) { return !use_lora || model::is_lora_param(name); });

  bool have_moments = true;
  for (const auto& name : state.params.names()) {
    if (!state.params.get(name).requires_grad()) continue;
    const auto* m = ckpt.find("adam/m/" + name);
    const auto* v = ckpt.find("adam/v/" + name);
    if (m == nullptr || v == nullptr) {
      have_moments = false;
      break;
    }
    state.optimizer.first_moment.emplace_back(m->values.begin(), m->values.end());
    state.optimizer.second_moment.emplace_back(v->values.begin(), v->values.end());
  }
  if (!have_moments) state.optimizer = {};
  if (const auto* s = ckpt.find("adam/step"); s != nullptr && have_moments)
    state.optimizer.step = static_cast<std::size_t>(s->values.at(0));
  if (const auto* e = ckpt.find("meta/epoch")) state.epoch = static_cast<std::size_t>(e->values.at(0));
  for (const auto& block : ckpt.blocks()) {
    if (block.name.rfind("tracker/", 0) != 0) continue;
    state.tracker[block.name.substr(8)] = std::deque<double>(block.values.begin(), block.values.end());
  }
  return state;
}

Trainer::Trainer(const model::Denoiser& denoiser, const world::EditWorld& world, TrainConfig config)
    : denoiser_(denoiser), world_(world), config_(std::move(config)) {
  config_.ppo.validate();
  if (config_.min_count == 0) throw std::invalid_argument("min_count must be positive");
}

TrainState Trainer::initial_state(const model::ParamSet& pretrained) const {
  model::ParamSet base = pretrained.frozen_copy();
  bool has_lora = false;
  for (const auto& name : base.names()) has_lora = has_lora || model::is_lora_param(name);
  if (config_.use_lora && !has_lora) model::attach_lora(base, denoiser_.config(), ad::derive_key(config_.seed, {kLoraTag}));
  TrainState state;
  const bool lora = config_.use_lora;
  state.params = base.clone([lora](const std::string& name) { return !lora || model::is_lora_param(name); });
  denoiser_.check_params(state.params);
  return state;
}

std::vector<TrajectorySpec> Trainer::epoch_specs(std::size_t epoch) const {
  const std::size_t n = config_.ppo.sample_batch_size * config_.ppo.num_batches_per_epoch;
  std::vector<TrajectorySpec> specs(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (config_.triple_pool > 0) {
      const std::size_t slot = ((epoch - 1) * n + i) % config_.triple_pool;
      specs[i].triple_seed = model::training_seed(config_.seed, {kTripleTag, 0, slot});
    } else {
      specs[i].triple_seed = model::training_seed(config_.seed, {kTripleTag, epoch, i});
    }
    specs[i].noise_seed = ad::derive_key(config_.seed, {kNoiseTag, epoch, i});
  }
  return specs;
}

EpochMetrics Trainer::run_epoch(TrainState& state, ad::AdamW& optimizer, PromptStatTracker& tracker,
                                const model::ParamSet& reference, std::size_t epoch) const {
  const PpoConfig& ppo = config_.ppo;
  const double guidance = ppo.effective_guidance();
  model::ParamSet snapshot = state.params.frozen_copy();

  CollectOptions options;
  options.reward = config_.reward;
  options.difficulty = config_.difficulty;
  options.guidance_scale = guidance;
  options.reference = &reference;
  std::vector<TrajectorySpec> specs = epoch_specs(epoch);
  std::vector<Trajectory> trajs = collect_trajectories(denoiser_, snapshot, world_, specs, options);
  std::vector<double> advantages = compute_advantages(trajs, tracker, ppo.adv_clip_max);

  EpochMetrics m;
  m.epoch = epoch;
  for (const auto& t : trajs) {
    m.mean_reward += t.terminal.total;
    m.mean_l_att += t.terminal.l_att;
    m.mean_mae += t.terminal.mae;
  }
  const double n_traj = static_cast<double>(trajs.size());
  m.mean_reward /= n_traj;
  m.mean_l_att /= n_traj;
  m.mean_mae /= n_traj;

  double ratio_sum = 0.0, clip_sum = 0.0, grad_sum = 0.0;
  std::size_t ratio_terms = 0, steps_applied = 0;
  optimizer.zero_grad();
  for (std::size_t inner = 0; inner < ppo.num_inner_epochs; ++inner) {
    std::vector<std::size_t> order = permutation(trajs.size(), ad::derive_key(config_.seed, {kOrderTag, epoch, inner}));
    std::vector<Trajectory> shuffled;
    std::vector<double> shuffled_adv;
    shuffled.reserve(trajs.size());
    for (std::size_t i : order) {
      shuffled.push_back(trajs[i]);
      shuffled_adv.push_back(advantages[i]);
    }
    auto timesteps = select_timesteps(shuffled, ppo.timestep_fraction,
                                      ad::derive_key(config_.seed, {kTimestepTag, epoch, inner}));
    std::size_t accumulated = 0;
    const std::size_t batches = (shuffled.size() + ppo.train_batch_size - 1) / ppo.train_batch_size;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * ppo.train_batch_size;
      const std::size_t hi = std::min(shuffled.size(), lo + ppo.train_batch_size);
      std::vector<std::vector<std::size_t>> batch_ts(timesteps.begin() + static_cast<std::ptrdiff_t>(lo),
                                                     timesteps.begin() + static_cast<std::ptrdiff_t>(hi));
      SurrogateResult sur =
          ppo_surrogate(denoiser_, state.params, std::span<const Trajectory>(shuffled).subspan(lo, hi - lo),
                        std::span<const double>(shuffled_adv).subspan(lo, hi - lo), batch_ts, ppo.clip_range, guidance);
      const double objective = sur.objective.item();
      if (!std::isfinite(objective))
        throw TrainingHalted("epoch " + std::to_string(epoch) + ": non-finite PPO objective");
      ratio_sum += sur.mean_ratio * static_cast<double>(sur.terms);
      clip_sum += sur.clip_fraction * static_cast<double>(sur.terms);
      ratio_terms += sur.terms;
      if (sur.objective.requires_grad())
        ad::backward(ad::scale(sur.objective, -1.0 / static_cast<double>(ppo.gradient_accumulation_steps)));
      ++accumulated;
      if (accumulated == ppo.gradient_accumulation_steps || b + 1 == batches) {
        ad::StepReport report = optimizer.step();
        if (report.applied) {
          grad_sum += report.grad_norm;
          ++steps_applied;
        }
        optimizer.zero_grad();
        accumulated = 0;
      }
    }
  }
  if (ratio_terms > 0) {
    m.mean_ratio = ratio_sum / static_cast<double>(ratio_terms);
    m.clip_fraction = clip_sum / static_cast<double>(ratio_terms);
  }
  if (steps_applied > 0) m.grad_norm = grad_sum / static_cast<double>(steps_applied);
  return m;
}

std::vector<EpochMetrics> Trainer::train(TrainState& state, const model::ParamSet& reference,
                                         const TrainOutputs& outputs) const {
  ad::AdamW optimizer(state.params.trainable(), config_.optimizer);
  if (!state.optimizer.first_moment.empty()) optimizer.load_state(state.optimizer);
  PromptStatTracker tracker(config_.buffer_size, config_.min_count);
  tracker.restore(state.tracker);

  std::filesystem::path metrics_path, ckpt_dir;
  if (outputs.run_dir) {
    ckpt_dir = *outputs.run_dir / "checkpoints";
    std::filesystem::create_directories(ckpt_dir);
    metrics_path = *outputs.run_dir / "metrics.csv";
    reset_metrics_file(metrics_path, state.epoch);
  }

  std::vector<EpochMetrics> history;
  for (std::size_t epoch = state.epoch + 1; epoch <= config_.num_epochs; ++epoch) {
    EpochMetrics m;
    try {
      m = run_epoch(state, optimizer, tracker, reference, epoch);
    } catch (const TrainingHalted& e) {
      logger()->error("training halted: {}", e.what());
      throw;
    }
    state.optimizer = optimizer.state();
    state.tracker = tracker.buffers();
    state.epoch = epoch;
    history.push_back(m);
    logger()->info("epoch {} reward {:.4f} l_att {:.4f} mae {:.4f} ratio {:.5f} grad {:.4f}", epoch, m.mean_reward,
                     m.mean_l_att, m.mean_mae, m.mean_ratio, m.grad_norm);
    if (outputs.run_dir) {
      std::ofstream out(metrics_path, std::ios::app);
      out << metrics_row(m) << '\n';
      if (config_.save_freq > 0 && epoch % config_.save_freq == 0) {
        save_state(state, denoiser_.config()).save(ckpt_dir / checkpoint_name(epoch));
        prune_checkpoints(ckpt_dir, std::max<std::size_t>(config_.num_checkpoint_limit, 1));
      }
    }
    if (outputs.on_epoch) outputs.on_epoch(m);
  }
  if (outputs.run_dir) save_state(state, denoiser_.config()).save(*outputs.run_dir / "final.ckpt");
  return history;
}

}  // namespace pixforge::ppo
