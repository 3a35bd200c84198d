// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. Pass criterion numbers as arguments to run a
// subset; PIXFORGE_ACCEPT_DIR overrides the scratch directory.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pixforge/checkpoint.hpp"
#include "pixforge/commands.hpp"
#include "pixforge/config.hpp"
#include "pixforge/denoiser.hpp"
#include "pixforge/log.hpp"
#include "pixforge/metrics.hpp"
#include "pixforge/ppo.hpp"
#include "pixforge/pretrain.hpp"
#include "pixforge/reward.hpp"
#include "pixforge/text.hpp"
#include "pixforge/world.hpp"

namespace fs = std::filesystem;
using namespace pixforge;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v) { return format_number(v); }

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// splitmix-style stream for picking coordinates and test values.
struct Picker {
  std::uint64_t state;
  std::uint64_t next() { return ad::mix64(state += 0x9e3779b97f4a7c15ULL); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * static_cast<double>(next() >> 11) * 0x1.0p-53; }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(next() % n); }
};

model::DenoiserConfig desk_model() {
  model::DenoiserConfig c;
  c.num_steps = 10;
  return c;
}

model::Denoiser desk_denoiser() { return model::Denoiser(desk_model(), model::NoiseSchedule::linear_log_snr(10, 1.0)); }

// Random weights with non-zero LoRA B so every factor carries gradient.
model::ParamSet random_policy(const model::DenoiserConfig& cfg, std::uint64_t seed) {
  model::ParamSet p = model::init_params(cfg, seed, true).clone([](const std::string&) { return true; });
  Picker pick{seed};
  for (const auto& name : p.names())
    if (name.ends_with(".lora_b"))
      for (double& v : ad::Tensor(p.get(name)).mutable_data()) v = static_cast<double>(static_cast<float>(pick.uniform(-0.2, 0.2)));
  return p;
}

struct Coordinate {
  std::string name;
  std::size_t index;
};

std::vector<Coordinate> pick_coordinates(const model::ParamSet& params, std::size_t count, std::uint64_t seed) {
  Picker pick{seed};
  const std::size_t total = params.total_values();
  std::vector<Coordinate> out;
  while (out.size() < count) {
    std::size_t flat = pick.index(total);
    for (const auto& name : params.names()) {
      const std::size_t n = params.get(name).numel();
      if (flat < n) {
        out.push_back({name, flat});
        break;
      }
      flat -= n;
    }
  }
  return out;
}

struct GradCheck {
  double worst = 0.0;
  std::size_t checked = 0;
};

GradCheck check_coordinates(model::ParamSet& params, const std::vector<Coordinate>& coords,
                            const std::function<ad::Tensor()>& build) {
  params.zero_grad();
  ad::backward(build());
  GradCheck r;
  for (const auto& c : coords) {
    const ad::Tensor& t = params.get(c.name);
    const double g = t.grad().empty() ? 0.0 : t.grad()[c.index];
    auto data = t.node()->value.data();
    const double orig = data[c.index];
    const double h = 1e-5;
    double up, down;
    {
      ad::NoGradGuard guard;
      data[c.index] = orig + h;
      up = build().item();
      data[c.index] = orig - h;
      down = build().item();
      data[c.index] = orig;
    }
    const double fd = (up - down) / (2 * h);
    r.worst = std::max(r.worst, std::abs(fd - g) / std::max({1e-6, std::abs(fd), std::abs(g)}));
    ++r.checked;
  }
  return r;
}

Outcome criterion_gradients() {
  const auto t0 = Clock::now();
  model::Denoiser den = desk_denoiser();
  world::EditWorld world;
  model::ParamSet params = random_policy(den.config(), 11);

  // Denoiser: weighted sum of the guided noise prediction at a mid step.
  world::EditTriple triple = world.generate_triple(3, world::Difficulty::multi_object);
  Picker pick{5};
  std::vector<double> x_t(den.config().latent_size()), weights(x_t.size());
  for (auto& v : x_t) v = pick.uniform(-1.5, 1.5);
  for (auto& v : weights) v = pick.uniform(-1.0, 1.0);
  const ad::Tensor w = ad::Tensor::from({weights.size()}, weights);
  auto denoiser_loss = [&] {
    model::StepOutput out = den.guided_predict(params, x_t, 5, triple.source, triple.instruction, 2.0);
    return ad::sum(ad::mul(ad::reshape(out.eps, {weights.size()}), w));
  };
  GradCheck a = check_coordinates(params, pick_coordinates(params, 20, 21), denoiser_loss);

  // PPO surrogate over two collected trajectories.
  std::vector<ppo::TrajectorySpec> specs{{101, 7}, {202, 8}};
  ppo::CollectOptions opts;
  opts.guidance_scale = 2.0;
  auto trajs = ppo::collect_trajectories(den, params.frozen_copy(), world, specs, opts);
  // Move off theta_old by a small step so ratios differ from 1 but stay inside the clip band.
  for (const auto& name : params.names())
    for (double& v : ad::Tensor(params.get(name)).mutable_data()) v += 1e-4 * pick.uniform(-1.0, 1.0);
  std::vector<double> adv{1.3, -0.7};
  auto steps = ppo::select_timesteps(trajs, 1.0, 9);
  auto surrogate = [&] { return ppo::ppo_surrogate(den, params, trajs, adv, steps, 0.2, 2.0).objective; };
  GradCheck b = check_coordinates(params, pick_coordinates(params, 20, 22), surrogate);

  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = a.worst < 1e-3 && b.worst < 1e-3 && secs < 120.0;
  o.detail = "denoiser worst rel err " + num(a.worst) + " over " + std::to_string(a.checked) +
             " coords, surrogate worst rel err " + num(b.worst) + " over " + std::to_string(b.checked) + " coords, " +
             num(std::round(secs * 10) / 10) + " s";
  return o;
}

Outcome criterion_density() {
  const auto t0 = Clock::now();
  model::Denoiser den = desk_denoiser();
  const std::size_t n = den.config().latent_size();
  const double stddev = den.schedule().transition_std(4);
  Picker pick{17};
  std::vector<double> mu(n);
  for (auto& v : mu) v = pick.uniform(-1.0, 1.0);
  model::StepOutput out;
  out.mean = ad::Tensor::from({n}, mu);
  out.stddev = stddev;

  const std::size_t draws = 100000;
  double total = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    std::vector<double> noise = ad::CounterRng(ad::derive_key(2024, {i})).normals(n);
    total += model::Denoiser::sample_step(out, noise).log_prob;
  }
  const double mc = total / static_cast<double>(draws);
  const double analytic = -0.5 * static_cast<double>(n) * (std::log(2.0 * std::numbers::pi * stddev * stddev) + 1.0);
  const double rel = std::abs(mc - analytic) / std::abs(analytic);
  const double secs = seconds_since(t0);
  return {rel < 0.01 && secs < 60.0, "MC mean log-prob " + num(mc) + " vs analytic " + num(analytic) + " (rel " +
                                         num(rel) + "), " + num(std::round(secs * 10) / 10) + " s"};
}

std::vector<ppo::Trajectory> sample_trajectories(const model::Denoiser& den, const model::ParamSet& params,
                                                 std::size_t count, std::uint64_t seed) {
  world::EditWorld world;
  std::vector<ppo::TrajectorySpec> specs;
  for (std::size_t i = 0; i < count; ++i)
    specs.push_back({model::training_seed(seed, {i}), ad::derive_key(seed, {i, 1})});
  ppo::CollectOptions opts;
  opts.guidance_scale = 2.0;
  return ppo::collect_trajectories(den, params, world, specs, opts);
}

Outcome criterion_mdp() {
  model::Denoiser den = desk_denoiser();
  model::ParamSet params = random_policy(den.config(), 31).frozen_copy();
  auto trajs = sample_trajectories(den, params, 50, 77);
  std::size_t bad_sum = 0, bad_zero = 0, bad_len = 0;
  for (const auto& tr : trajs) {
    if (tr.steps.size() != den.config().num_steps) ++bad_len;
    if (tr.return_sum() != tr.terminal.total || tr.steps.back().reward != tr.terminal.total) ++bad_sum;
    for (std::size_t i = 0; i + 1 < tr.steps.size(); ++i)
      if (tr.steps[i].reward != 0.0) ++bad_zero;
  }
  return {trajs.size() == 50 && bad_sum == 0 && bad_zero == 0 && bad_len == 0,
          std::to_string(trajs.size()) + " trajectories, return mismatches " + std::to_string(bad_sum) +
              ", non-zero intermediate rewards " + std::to_string(bad_zero) + ", wrong lengths " +
              std::to_string(bad_len)};
}

Outcome criterion_ppo_identities() {
  model::Denoiser den = desk_denoiser();
  model::ParamSet params = random_policy(den.config(), 41);
  auto trajs = sample_trajectories(den, params.frozen_copy(), 8, 91);
  ppo::PromptStatTracker tracker(16, 16);
  std::vector<double> adv = ppo::compute_advantages(trajs, tracker, 5.0);
  auto steps = ppo::select_timesteps(trajs, 1.0, 3);
  ppo::SurrogateResult s = ppo::ppo_surrogate(den, params, trajs, adv, steps, 0.2, 2.0);
  double worst_ratio = 0.0;
  for (double r : s.ratios) worst_ratio = std::max(worst_ratio, std::abs(r - 1.0));
  double weighted = 0.0;
  for (std::size_t j = 0; j < trajs.size(); ++j) weighted += adv[j] * static_cast<double>(steps[j].size());
  const double mean_adv = weighted / static_cast<double>(s.terms);
  const double obj_err = std::abs(s.objective.item() - mean_adv);

  // One-step scalar MDP: a ~ N(theta, sigma^2). Unclipped surrogate gradient at
  // theta_old is mean_i A_i (a_i - theta) / sigma^2.
  const double theta0 = 0.3, sigma = 0.7;
  const std::size_t n = 64;
  Picker pick{123};
  std::vector<double> actions(n), advs(n), olds(n);
  ad::Tensor frozen = ad::Tensor::from({1}, {theta0});
  for (std::size_t i = 0; i < n; ++i) {
    actions[i] = theta0 + sigma * ad::CounterRng(99).normal(i);
    advs[i] = pick.uniform(-2.0, 2.0);
    olds[i] = model::gaussian_log_prob(std::span<const double>(&actions[i], 1), frozen, sigma).item();
  }
  ad::Tensor theta = ad::Tensor::from({1}, {theta0}, true);
  const double inf = std::numeric_limits<double>::infinity();
  std::optional<ad::Tensor> total;
  for (std::size_t i = 0; i < n; ++i) {
    ad::Tensor lp = model::gaussian_log_prob(std::span<const double>(&actions[i], 1), theta, sigma);
    ad::Tensor term = ppo::clipped_term(lp, olds[i], advs[i], inf).value;
    total = total ? ad::add(*total, term) : term;
  }
  ad::backward(ad::scale(*total, 1.0 / static_cast<double>(n)));
  double oracle = 0.0;
  for (std::size_t i = 0; i < n; ++i) oracle += advs[i] * (actions[i] - theta0) / (sigma * sigma);
  oracle /= static_cast<double>(n);
  const double grad_err = std::abs(theta.grad()[0] - oracle);

  return {worst_ratio <= 1e-6 && obj_err <= 1e-12 && grad_err <= 1e-6,
          "max |r-1| " + num(worst_ratio) + " over " + std::to_string(s.ratios.size()) + " terms, |surrogate - mean A| " +
              num(obj_err) + ", REINFORCE grad " + num(theta.grad()[0]) + " vs oracle " + num(oracle)};
}

Outcome criterion_reward() {
  Picker pick{55};
  bool ok = true;
  double worst_identical = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    world::AttentionMap gt{4, 4, {}};
    reward::AggregatedAttention m;
    m.height = m.width = 4;
    for (int i = 0; i < 16; ++i) gt.values.push_back(pick.uniform(0.0, 1.0));
    m.values = gt.values;
    worst_identical = std::max(worst_identical, std::abs(reward::attention_loss(gt, m) - 1.0));

    std::size_t a = pick.index(16), b = (a + 1 + pick.index(15)) % 16;
    gt.values.assign(16, 0.0);
    m.values.assign(16, 0.0);
    gt.values[a] = 1.0;
    m.values[b] = 1.0;
    ok = ok && reward::attention_loss(gt, m) == 0.0;
  }
  ok = ok && worst_identical <= 1e-12;

  world::EditWorld world;
  for (double tau : {0.0, 0.01, 0.05, 0.5, 1.0}) {
    Image v = world.generate_triple(static_cast<std::uint64_t>(tau * 1000), world::Difficulty::basic).source;
    auto c = reward::clip_loss(v, v, tau);
    ok = ok && c.mae == 0.0 && c.l_clip == 0.0;
  }
  std::size_t exact = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const double l_att = pick.uniform(-1.0, 1.0);
    reward::ClipLoss c;
    c.mae = pick.uniform(0.0, 0.5);
    c.l_clip = c.mae > 0.05 ? c.mae : 0.0;
    auto r = reward::total_reward(l_att, c, -1.0);
    exact += r.total == l_att + (-1.0) * c.l_clip ? 1 : 0;
  }
  ok = ok && exact == 200;
  return {ok, "identical-map |l_att-1| " + num(worst_identical) + ", disjoint maps 0, clip_loss(V,V)=0 for 5 taus, " +
                  std::to_string(exact) + "/200 totals bit-exact at alpha -1"};
}

// Reference SSIM: explicit Gaussian, per-window two-pass moments.
double reference_ssim(const Image& x, const Image& y) {
  const int win = 7;
  const double sigma = 1.5, c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double w[7][7], wsum = 0.0;
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) {
      w[i][j] = std::exp(-((i - 3) * (i - 3) + (j - 3) * (j - 3)) / (2 * sigma * sigma));
      wsum += w[i][j];
    }
  double acc = 0.0;
  int count = 0;
  for (std::size_t r = 0; r + win <= x.height; ++r)
    for (std::size_t c = 0; c + win <= x.width; ++c) {
      double mx = 0, my = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          mx += w[i][j] / wsum * x.at(r + i, c + j);
          my += w[i][j] / wsum * y.at(r + i, c + j);
        }
      double vx = 0, vy = 0, cov = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          const double dx = x.at(r + i, c + j) - mx, dy = y.at(r + i, c + j) - my;
          vx += w[i][j] / wsum * dx * dx;
          vy += w[i][j] / wsum * dy * dy;
          cov += w[i][j] / wsum * dx * dy;
        }
      acc += (2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return acc / count;
}

Outcome criterion_metrics() {
  Picker pick{66};
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    Image a(8, 8), b(8, 8);
    for (auto& v : a.pixels) v = pick.uniform(0.0, 1.0);
    for (std::size_t i = 0; i < b.size(); ++i) b.pixels[i] = std::clamp(a.pixels[i] + pick.uniform(-0.3, 0.3), 0.0, 1.0);
    double s1 = 0, s2 = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      s1 += std::abs(a.pixels[i] - b.pixels[i]);
      s2 += (a.pixels[i] - b.pixels[i]) * (a.pixels[i] - b.pixels[i]);
    }
    const double ref_l1 = s1 / 64, ref_l2 = s2 / 64, ref_psnr = 10 * std::log10(1.0 / ref_l2);
    worst = std::max({worst, std::abs(metrics::l1(a, b) - ref_l1), std::abs(metrics::l2(a, b) - ref_l2),
                      std::abs(metrics::psnr(a, b) - ref_psnr), std::abs(metrics::ssim(a, b) - reference_ssim(a, b))});
  }
  const double p = metrics::psnr_from_mse(0.01, 1.0);
  return {worst <= 1e-9 && p == 20.0,
          "worst deviation from brute-force reference " + num(worst) + " over 10 pairs, PSNR(MSE 0.01) = " + num(p)};
}

// ---- pipeline runs through the CLI commands ----

fs::path work_dir() {
  if (const char* d = std::getenv("PIXFORGE_ACCEPT_DIR"); d && *d) return d;
  return fs::temp_directory_path() / ("pixforge_acceptance_" + std::to_string(::getpid()));
}

config::RunConfig desk_config() { return config::load(fs::path(PIXFORGE_SOURCE_DIR) / "configs" / "desk.cfg"); }

fs::path write_config(const fs::path& dir, const std::string& name, const config::RunConfig& c) {
  fs::create_directories(dir);
  const fs::path path = dir / (name + ".cfg");
  std::ofstream(path) << config::manifest(c);
  return path;
}

void run(int (*cmd)(const cli::CommandOptions&, std::ostream&), const fs::path& cfg, const fs::path& out,
         std::optional<fs::path> resume = std::nullopt) {
  cli::CommandOptions o;
  o.config = cfg;
  o.out = out;
  o.resume = resume;
  std::ostringstream sink;
  if (cmd(o, sink) != 0) throw std::runtime_error("command failed for " + out.string());
}

double mean_range(const std::vector<double>& v, std::size_t lo, std::size_t hi) {
  double s = 0;
  for (std::size_t i = lo; i < hi; ++i) s += v[i];
  return s / static_cast<double>(hi - lo);
}

struct Window {
  double first = 0.0, last = 0.0;
};
Window first_last10(const std::vector<double>& v) {
  const std::size_t k = std::min<std::size_t>(10, v.size());
  return {mean_range(v, 0, k), mean_range(v, v.size() - k, v.size())};
}

struct Pipeline {
  fs::path root;
  config::RunConfig base;
  fs::path pretrained;
  double pretrain_seconds = 0.0;

  void ensure_pretrained() {
    if (!pretrained.empty()) return;
    base = desk_config();
    base.logdir = (root / "logs").string();
    const fs::path cfg = write_config(root, "desk", base);
    const auto t0 = Clock::now();
    cli::CommandOptions o;
    o.config = cfg;
    std::ostringstream sink;
    cli::cmd_pretrain(o, sink);
    pretrain_seconds = seconds_since(t0);
    pretrained = config::pretrained_path(base);
  }

  std::map<std::string, cli::MetricsTable> runs;
  std::map<std::string, double> run_seconds;

  const cli::MetricsTable& train(const std::string& name, const std::function<void(config::RunConfig&)>& tweak) {
    if (auto it = runs.find(name); it != runs.end()) return it->second;
    ensure_pretrained();
    config::RunConfig c = base;
    tweak(c);
    const auto t0 = Clock::now();
    run(cli::cmd_train, write_config(root, name, c), root / name);
    run_seconds[name] = seconds_since(t0);
    return runs[name] = cli::read_metrics(root / name / "metrics.csv");
  }
};

Outcome criterion_training(Pipeline& p) {
  const auto& m = p.train("full", [](config::RunConfig&) {});
  const Window att = first_last10(m.mean_l_att), rew = first_last10(m.mean_reward);
  const double minutes = (p.pretrain_seconds + p.run_seconds["full"]) / 60.0;
  return {m.epoch.size() == 60 && att.last > att.first && rew.last > rew.first && minutes < 30.0,
          std::to_string(m.epoch.size()) + " epochs, l_att first10 " + num(att.first) + " last10 " + num(att.last) +
              " (+" + num(att.last - att.first) + "), reward first10 " + num(rew.first) + " last10 " + num(rew.last) +
              " (+" + num(rew.last - rew.first) + "), pretrain+train " + num(std::round(minutes * 100) / 100) +
              " min"};
}

Outcome criterion_ablation(Pipeline& p) {
  const auto& full = p.train("full", [](config::RunConfig&) {});
  const auto& attn = p.train("attention_only", [](config::RunConfig& c) { c.reward_alpha = 0.0; });
  const auto& clip = p.train("clip_only", [](config::RunConfig& c) { c.reward_include_attention = false; });
  const double mae_full = first_last10(full.mean_mae).last, mae_attn = first_last10(attn.mean_mae).last;
  const double att_full = first_last10(full.mean_l_att).last, att_clip = first_last10(clip.mean_l_att).last;
  return {mae_attn > mae_full && att_clip < att_full,
          "final10 MAE attention-only " + num(mae_attn) + " vs full " + num(mae_full) + ", final10 l_att clip-only " +
              num(att_clip) + " vs full " + num(att_full)};
}

std::vector<unsigned char> bytes_of(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

// Every regular file except the manifest (which records the run directory) and the lock.
std::map<std::string, std::vector<unsigned char>> artifacts(const fs::path& dir) {
  std::map<std::string, std::vector<unsigned char>> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), dir).string();
    if (rel == "manifest.txt") continue;
    out[rel] = bytes_of(e.path());
  }
  return out;
}

bool same_rollout(const model::Rollout& a, const model::Rollout& b) {
  if (a.output != b.output || a.final_latent != b.final_latent || a.steps.size() != b.steps.size()) return false;
  for (std::size_t i = 0; i < a.steps.size(); ++i)
    if (a.steps[i].log_prob != b.steps[i].log_prob || a.steps[i].action != b.steps[i].action ||
        a.steps[i].attention != b.steps[i].attention)
      return false;
  return true;
}

Outcome criterion_determinism(Pipeline& p) {
  p.ensure_pretrained();
  config::RunConfig c = p.base;
  c.num_epochs = 4;
  c.save_freq = 2;
  const fs::path cfg = write_config(p.root, "det", c);
  run(cli::cmd_train, cfg, p.root / "det_a");
  run(cli::cmd_train, cfg, p.root / "det_b");
  auto a = artifacts(p.root / "det_a"), b = artifacts(p.root / "det_b");
  const bool identical = !a.empty() && a == b && a.count("metrics.csv") && a.count("final.ckpt");

  // Stop at epoch 2, then resume to 4.
  config::RunConfig half = c;
  half.num_epochs = 2;
  run(cli::cmd_train, write_config(p.root, "det_half", half), p.root / "det_c");
  run(cli::cmd_train, cfg, p.root / "det_c", p.root / "det_c" / "final.ckpt");
  const bool resumed = bytes_of(p.root / "det_c" / "final.ckpt") == a["final.ckpt"] &&
                       bytes_of(p.root / "det_c" / "metrics.csv") == a["metrics.csv"];

  // save -> load -> rollout against the in-memory policy.
  model::Denoiser den(config::denoiser_config(c), config::noise_schedule(c));
  world::EditWorld world(config::world_config(c));
  world::EditTriple triple = world.generate_triple(model::heldout_seed(0), world::Difficulty::multi_object);
  ppo::TrainState state =
      ppo::load_state(model::Checkpoint::load(p.root / "det_a" / "final.ckpt"), den.config(), c.use_lora);
  model::ParamSet live = random_policy(den.config(), 5);
  bool round_trip = true;
  for (const model::ParamSet* params : {&state.params, &live}) {
    model::Rollout before = den.rollout(*params, triple.source, triple.instruction, 1234, c.sample_guidance_scale);
    model::Checkpoint ckpt;
    model::store_model_config(ckpt, den.config());
    model::store_params(ckpt, *params);
    const fs::path path = p.root / "roundtrip.ckpt";
    ckpt.save(path);
    model::ParamSet back = model::restore_params(model::Checkpoint::load(path));
    model::Rollout after = den.rollout(back, triple.source, triple.instruction, 1234, c.sample_guidance_scale);
    round_trip = round_trip && bitwise_equal(*params, back) && same_rollout(before, after);
  }
  return {identical && resumed && round_trip,
          std::string("two runs ") + (identical ? "byte-identical" : "DIFFER") + " across " +
              std::to_string(a.size()) + " files, resume 2->4 " + (resumed ? "matches" : "DIFFERS") +
              " the straight run, save/load/rollout " + (round_trip ? "bit-identical" : "DIFFERS")};
}

}  // namespace

int main(int argc, char** argv) {
  logger()->set_level(spdlog::level::warn);
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  auto want = [&](int k) { return wanted.empty() || wanted.count(k) != 0; };

  Pipeline pipeline;
  pipeline.root = work_dir();
  fs::remove_all(pipeline.root);
  fs::create_directories(pipeline.root);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient correctness", criterion_gradients},
      {"sampler density", criterion_density},
      {"MDP reward structure", criterion_mdp},
      {"PPO identities", criterion_ppo_identities},
      {"reward invariants", criterion_reward},
      {"metric oracles", criterion_metrics},
      {"training improvement", [&] { return criterion_training(pipeline); }},
      {"ablation trend", [&] { return criterion_ablation(pipeline); }},
      {"determinism and persistence", [&] { return criterion_determinism(pipeline); }},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int k = static_cast<int>(i) + 1;
    if (!want(k)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << k << " (" << criteria[i].first << "): " << o.detail
              << std::endl;
  }
  if (!std::getenv("PIXFORGE_ACCEPT_DIR")) fs::remove_all(pipeline.root);
  return failures == 0 ? 0 : 1;
}
