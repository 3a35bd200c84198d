#include "pixforge/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace pixforge::model {

using ad::Tensor;

namespace {

constexpr double kNormEps = 1e-6;
constexpr std::uint64_t kInitNoiseTag = 0x696e6974ULL;
constexpr std::uint64_t kStepNoiseTag = 0x73746570ULL;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Tensor random_tensor(const std::string& name, ad::Shape shape, double stddev, std::uint64_t seed) {
  ad::CounterRng rng(ad::derive_key(seed, {fnv1a(name)}));
  std::size_t n = ad::numel_of(shape);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<double>(static_cast<float>(rng.normal(i) * stddev));
  return Tensor::from(std::move(shape), std::move(v));
}

Tensor rms_norm(const Tensor& h) { return ad::div(h, ad::sqrt(ad::add_scalar(ad::mean_last(ad::square(h)), kNormEps))); }

std::string block_prefix(std::size_t b) { return "block" + std::to_string(b) + "."; }

const char* const kProjections[] = {"q", "k", "v", "o"};

struct AttentionResult {
  Tensor out;
  AttentionBlock weights;  // empty unless requested
};

AttentionResult multi_head_attention(const Tensor& queries_in, const Tensor& keys_in, const Tensor& wq,
                                     const Tensor& wk, const Tensor& wv, const Tensor& wo, std::size_t heads,
                                     const std::vector<bool>& allowed, bool keep_weights) {
  Tensor q = ad::matmul(queries_in, wq);
  Tensor k = ad::matmul(keys_in, wk);
  Tensor v = ad::matmul(keys_in, wv);
  std::size_t width = q.dim(1);
  std::size_t dh = width / heads;
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outs;
  AttentionResult result;
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = ad::slice_last(q, h * dh, (h + 1) * dh);
    Tensor kh = ad::slice_last(k, h * dh, (h + 1) * dh);
    Tensor vh = ad::slice_last(v, h * dh, (h + 1) * dh);
    Tensor weights = ad::softmax_last(ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt), allowed);
    if (keep_weights) {
      auto w = weights.data();
      if (result.weights.empty()) result.weights.assign(w.size(), 0.0);
      for (std::size_t i = 0; i < w.size(); ++i) result.weights[i] += w[i] / static_cast<double>(heads);
    }
    outs.push_back(ad::matmul(weights, vh));
  }
  result.out = ad::matmul(ad::concat_last(outs), wo);
  return result;
}

}  // namespace

void DenoiserConfig::validate() const {
  if (image_size == 0 || patch == 0 || image_size % patch != 0)
    throw std::invalid_argument("model: patch size must divide image size");
  if (heads == 0 || width % heads != 0) throw std::invalid_argument("model: heads must divide width");
  if (num_steps == 0) throw std::invalid_argument("model: num_steps must be positive");
  if (channels == 0 || blocks == 0 || ff_mult == 0 || vocab_size < 2 || max_tokens == 0)
    throw std::invalid_argument("model: degenerate configuration");
}

NoiseSchedule NoiseSchedule::linear_log_snr(std::size_t steps, double eta) {
  if (steps == 0) throw std::invalid_argument("schedule: steps must be positive");
  if (!(eta >= 0.0 && eta <= 1.0)) throw std::invalid_argument("schedule: eta must lie in [0, 1]");
  NoiseSchedule s;
  s.eta = eta;
  s.alpha_bar.resize(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k) {
    double log_snr = 9.0 - 15.0 * static_cast<double>(k) / static_cast<double>(steps);
    s.alpha_bar[k] = 1.0 / (1.0 + std::exp(-log_snr));
  }
  return s;
}

double NoiseSchedule::transition_std(std::size_t t) const {
  double ab_t = alpha_bar.at(t + 1);
  double ab_prev = alpha_bar.at(t);
  return eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_prev);
}

double NoiseSchedule::mean_x_coef(std::size_t t) const {
  return std::sqrt(alpha_bar.at(t)) / std::sqrt(alpha_bar.at(t + 1));
}

double NoiseSchedule::mean_eps_coef(std::size_t t) const {
  double ab_t = alpha_bar.at(t + 1);
  double ab_prev = alpha_bar.at(t);
  double sigma = transition_std(t);
  double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
  return dir - std::sqrt(ab_prev) * std::sqrt(1.0 - ab_t) / std::sqrt(ab_t);
}

void ParamSet::add(std::string name, Tensor tensor) {
  if (has(name)) throw std::invalid_argument("duplicate parameter " + name);
  index_[name] = names_.size();
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(tensor));
}

const Tensor& ParamSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("missing parameter " + name);
  return tensors_[it->second];
}

ParamSet ParamSet::clone(const std::function<bool(const std::string&)>& trainable) const {
  ParamSet out;
  for (std::size_t i = 0; i < names_.size(); ++i) out.add(names_[i], tensors_[i].detach(trainable(names_[i])));
  return out;
}

std::vector<Tensor> ParamSet::trainable() const {
  std::vector<Tensor> out;
  for (const auto& t : tensors_)
    if (t.requires_grad()) out.push_back(t);
  return out;
}

std::size_t ParamSet::total_values() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.numel();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& t : tensors_) t.zero_grad();
}

bool bitwise_equal(const ParamSet& a, const ParamSet& b) {
  if (a.names_ != b.names_) return false;
  for (std::size_t i = 0; i < a.tensors_.size(); ++i) {
    if (a.tensors_[i].shape() != b.tensors_[i].shape()) return false;
    auto x = a.tensors_[i].data();
    auto y = b.tensors_[i].data();
    if (!std::equal(x.begin(), x.end(), y.begin())) return false;
  }
  return true;
}

bool is_lora_param(const std::string& name) { return name.find(".lora_") != std::string::npos; }

ParamSet init_params(const DenoiserConfig& c, std::uint64_t seed, bool with_lora) {
  c.validate();
  const std::size_t d = c.width;
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));
  ParamSet p;
  p.add("in.x", random_tensor("in.x", {c.patch_dim(), d}, 1.0 / std::sqrt(static_cast<double>(c.patch_dim())), seed));
  p.add("in.v", random_tensor("in.v", {c.patch_dim(), d}, 1.0 / std::sqrt(static_cast<double>(c.patch_dim())), seed));
  p.add("in.b", Tensor::zeros({d}));
  p.add("pos", random_tensor("pos", {c.num_patches(), d}, 0.5, seed));
  p.add("time", random_tensor("time", {c.num_steps, d}, 0.5, seed));
  p.add("token", random_tensor("token", {c.vocab_size, d}, 1.0, seed));
  for (std::size_t b = 0; b < c.blocks; ++b) {
    std::string pre = block_prefix(b);
    for (const char* kind : {"self.", "cross."})
      for (const char* proj : kProjections) {
        std::string name = pre + kind + proj;
        p.add(name, random_tensor(name, {d, d}, inv, seed));
      }
    std::size_t hidden = c.ff_mult * d;
    p.add(pre + "ff.w1", random_tensor(pre + "ff.w1", {d, hidden}, inv, seed));
    p.add(pre + "ff.b1", Tensor::zeros({hidden}));
    p.add(pre + "ff.w2", random_tensor(pre + "ff.w2", {hidden, d}, 1.0 / std::sqrt(static_cast<double>(hidden)), seed));
    p.add(pre + "ff.b2", Tensor::zeros({d}));
  }
  p.add("out.w", random_tensor("out.w", {d, c.patch_dim()}, inv, seed));
  p.add("out.b", Tensor::zeros({c.patch_dim()}));
  if (with_lora) attach_lora(p, c, seed);
  return p;
}

void attach_lora(ParamSet& params, const DenoiserConfig& c, std::uint64_t seed) {
  if (c.lora_rank == 0) throw std::invalid_argument("lora rank must be positive");
  const std::size_t d = c.width;
  for (std::size_t b = 0; b < c.blocks; ++b)
    for (const char* proj : kProjections) {
      std::string base = block_prefix(b) + "cross." + proj;
      params.add(base + ".lora_a", random_tensor(base + ".lora_a", {d, c.lora_rank}, 1.0 / std::sqrt(static_cast<double>(d)), seed));
      params.add(base + ".lora_b", Tensor::zeros({c.lora_rank, d}));
    }
}

Denoiser::Denoiser(DenoiserConfig config, NoiseSchedule schedule) : config_(config), schedule_(std::move(schedule)) {
  config_.validate();
  if (schedule_.steps() != config_.num_steps)
    throw std::invalid_argument("schedule has " + std::to_string(schedule_.steps()) + " steps, model expects " +
                                std::to_string(config_.num_steps));
  for (std::size_t k = 1; k < schedule_.alpha_bar.size(); ++k)
    if (!(schedule_.alpha_bar[k] < schedule_.alpha_bar[k - 1]))
      throw std::invalid_argument("schedule alpha_bar must be strictly decreasing");
  const std::size_t g = config_.grid(), ps = config_.patch, ch = config_.channels, w = config_.image_size;
  const std::size_t pd = config_.patch_dim();
  patch_index_.resize(config_.latent_size());
  latent_index_.resize(config_.latent_size());
  for (std::size_t p = 0; p < config_.num_patches(); ++p)
    for (std::size_t e = 0; e < pd; ++e) {
      std::size_t pr = p / g, pc = p % g;
      std::size_t i = e / (ps * ch), j = (e / ch) % ps, c = e % ch;
      std::size_t latent = ((pr * ps + i) * w + pc * ps + j) * ch + c;
      patch_index_[p * pd + e] = latent;
      latent_index_[latent] = p * pd + e;
    }
}

void Denoiser::check_params(const ParamSet& params) const {
  ParamSet reference = init_params(config_, 0, false);
  for (const auto& name : reference.names()) {
    if (!params.has(name)) throw std::invalid_argument("parameter set lacks " + name);
    if (params.get(name).shape() != reference.get(name).shape())
      throw ad::ShapeError("parameter " + name + " has shape " + ad::to_string(params.get(name).shape()) +
                           ", expected " + ad::to_string(reference.get(name).shape()));
  }
  for (const auto& name : params.names()) {
    if (reference.has(name)) continue;
    if (!is_lora_param(name)) throw std::invalid_argument("unexpected parameter " + name);
    ad::Shape want = name.ends_with(".lora_a") ? ad::Shape{config_.width, config_.lora_rank}
                                               : ad::Shape{config_.lora_rank, config_.width};
    if (params.get(name).shape() != want)
      throw ad::ShapeError("parameter " + name + " has shape " + ad::to_string(params.get(name).shape()) +
                           ", expected " + ad::to_string(want));
  }
}

std::vector<double> Denoiser::encode(const Image& image) const {
  if (image.height != config_.image_size || image.width != config_.image_size || image.channels != config_.channels)
    throw std::invalid_argument("image " + image.shape_string() + " does not match model resolution " +
                                std::to_string(config_.image_size));
  std::vector<double> out(image.pixels.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 2.0 * image.pixels[i] - 1.0;
  return out;
}

Image Denoiser::decode(std::span<const double> latent) const {
  if (latent.size() != config_.latent_size()) throw std::invalid_argument("decode: latent has wrong size");
  Image img(config_.image_size, config_.image_size, config_.channels);
  for (std::size_t i = 0; i < latent.size(); ++i) img.pixels[i] = std::clamp((latent[i] + 1.0) / 2.0, 0.0, 1.0);
  return img;
}

Denoiser::Forward Denoiser::forward(const ParamSet& p, std::span<const double> x_t, std::size_t t, const Image& source,
                                    const world::Instruction& instruction) const {
  const auto& c = config_;
  if (x_t.size() != c.latent_size())
    throw ad::ShapeError("predict: latent of size " + std::to_string(x_t.size()) + ", expected " +
                         std::to_string(c.latent_size()));
  if (t >= c.num_steps)
    throw std::out_of_range("predict: step " + std::to_string(t) + " outside [0, " + std::to_string(c.num_steps) + ")");
  if (instruction.tokens.empty() || instruction.tokens.size() != instruction.relevant.size())
    throw std::invalid_argument("predict: malformed instruction");
  std::vector<bool> allowed(instruction.tokens.size());
  for (std::size_t i = 0; i < instruction.tokens.size(); ++i) {
    if (instruction.tokens[i] >= c.vocab_size)
      throw std::out_of_range("predict: token id " + std::to_string(instruction.tokens[i]) + " outside vocabulary of " +
                              std::to_string(c.vocab_size));
    allowed[i] = instruction.tokens[i] != world::Vocabulary::kPad;
  }
  if (std::none_of(allowed.begin(), allowed.end(), [](bool b) { return b; }))
    throw std::invalid_argument("predict: instruction has no non-padding token");

  const std::size_t np = c.num_patches(), pd = c.patch_dim();
  std::vector<double> xp(np * pd), vp(np * pd);
  std::vector<double> src = encode(source);
  for (std::size_t i = 0; i < np * pd; ++i) {
    xp[i] = x_t[patch_index_[i]];
    vp[i] = src[patch_index_[i]];
  }

  auto has_lora = [&](const std::string& w) { return p.has(w + ".lora_a") && p.has(w + ".lora_b"); };
  auto effective = [&](const std::string& w) {
    if (!has_lora(w)) return p.get(w);
    Tensor delta = ad::matmul(p.get(w + ".lora_a"), p.get(w + ".lora_b"));
    return ad::add(p.get(w), c.lora_scale == 1.0 ? delta : ad::scale(delta, c.lora_scale));
  };

  Tensor h = ad::add(ad::matmul(Tensor::from({np, pd}, std::move(xp)), p.get("in.x")),
                     ad::matmul(Tensor::from({np, pd}, std::move(vp)), p.get("in.v")));
  h = ad::add(h, p.get("in.b"));
  h = ad::add(h, p.get("pos"));
  std::size_t step_row[1] = {t};
  h = ad::add(h, ad::gather_rows(p.get("time"), step_row));
  Tensor tokens = ad::gather_rows(p.get("token"), instruction.tokens);

  Forward out;
  for (std::size_t b = 0; b < c.blocks; ++b) {
    std::string pre = block_prefix(b);
    Tensor a = rms_norm(h);
    h = ad::add(h, multi_head_attention(a, a, p.get(pre + "self.q"), p.get(pre + "self.k"), p.get(pre + "self.v"),
                                        p.get(pre + "self.o"), c.heads, {}, false)
                       .out);
    a = rms_norm(h);
    auto cross = multi_head_attention(a, tokens, effective(pre + "cross.q"), effective(pre + "cross.k"),
                                      effective(pre + "cross.v"), effective(pre + "cross.o"), c.heads, allowed, true);
    h = ad::add(h, cross.out);
    out.attention.push_back(std::move(cross.weights));
    a = rms_norm(h);
    Tensor hidden = ad::silu(ad::add(ad::matmul(a, p.get(pre + "ff.w1")), p.get(pre + "ff.b1")));
    h = ad::add(h, ad::add(ad::matmul(hidden, p.get(pre + "ff.w2")), p.get(pre + "ff.b2")));
  }
  Tensor patches = ad::add(ad::matmul(rms_norm(h), p.get("out.w")), p.get("out.b"));
  out.eps = ad::take(patches, latent_index_, {c.latent_size()});
  return out;
}

StepOutput Denoiser::finish(Forward fwd, std::span<const double> x_t, std::size_t t) const {
  StepOutput out;
  Tensor x = Tensor::from({x_t.size()}, std::vector<double>(x_t.begin(), x_t.end()));
  out.mean = ad::add(ad::scale(x, schedule_.mean_x_coef(t)), ad::scale(fwd.eps, schedule_.mean_eps_coef(t)));
  out.stddev = schedule_.transition_std(t);
  out.eps = std::move(fwd.eps);
  out.attention = std::move(fwd.attention);
  return out;
}

StepOutput Denoiser::predict(const ParamSet& params, std::span<const double> x_t, std::size_t t, const Image& source,
                             const world::Instruction& instruction) const {
  return finish(forward(params, x_t, t, source, instruction), x_t, t);
}

StepOutput Denoiser::guided_predict(const ParamSet& params, std::span<const double> x_t, std::size_t t,
                                    const Image& source, const world::Instruction& instruction,
                                    double guidance_scale) const {
  if (!(guidance_scale >= 1.0)) throw std::invalid_argument("guidance_scale must be >= 1");
  Forward cond = forward(params, x_t, t, source, instruction);
  if (guidance_scale == 1.0) return finish(std::move(cond), x_t, t);
  Forward uncond = forward(params, x_t, t, source, world::Instruction::null(instruction.tokens.size()));
  Forward guided;
  guided.eps = ad::add(uncond.eps, ad::scale(ad::sub(cond.eps, uncond.eps), guidance_scale));
  guided.attention = std::move(cond.attention);
  return finish(std::move(guided), x_t, t);
}

SampledStep Denoiser::sample_step(const StepOutput& out, std::span<const double> noise) {
  if (noise.size() != out.mean.numel()) throw ad::ShapeError("sample_step: noise size does not match latent");
  if (!(out.stddev > 0.0))
    throw std::invalid_argument("sample_step: transition std is zero; log-probabilities need eta > 0");
  SampledStep s;
  auto mu = out.mean.data();
  s.next.resize(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) s.next[i] = mu[i] + out.stddev * noise[i];
  ad::NoGradGuard guard;
  s.log_prob = gaussian_log_prob(s.next, out.mean.detach(), out.stddev).item();
  return s;
}

std::vector<double> Denoiser::initial_noise(std::uint64_t seed, std::size_t n) {
  return ad::CounterRng(ad::derive_key(seed, {kInitNoiseTag})).normals(n);
}

std::vector<double> Denoiser::step_noise(std::uint64_t seed, std::size_t t, std::size_t n) {
  return ad::CounterRng(ad::derive_key(seed, {kStepNoiseTag, t})).normals(n);
}

Rollout Denoiser::rollout(const ParamSet& params, const Image& source, const world::Instruction& instruction,
                          std::uint64_t seed, double guidance_scale) const {
  ad::NoGradGuard guard;
  const std::size_t n = config_.latent_size();
  Rollout r;
  std::vector<double> x = initial_noise(seed, n);
  for (std::size_t t = config_.num_steps; t-- > 0;) {
    StepOutput out = guided_predict(params, x, t, source, instruction, guidance_scale);
    SampledStep step = sample_step(out, step_noise(seed, t, n));
    bool finite = std::isfinite(step.log_prob) &&
                  std::all_of(step.next.begin(), step.next.end(), [](double v) { return std::isfinite(v); });
    if (!finite) throw RolloutError("rollout: non-finite values at step " + std::to_string(t));
    r.steps.push_back({t, std::move(x), step.next, step.log_prob, std::move(out.attention)});
    x = std::move(step.next);
  }
  r.output = decode(x);
  r.final_latent = std::move(x);
  return r;
}

Tensor gaussian_log_prob(std::span<const double> x, const Tensor& mean, double stddev) {
  if (x.size() != mean.numel()) throw ad::ShapeError("gaussian_log_prob: point and mean differ in size");
  if (!(stddev > 0.0)) throw std::invalid_argument("gaussian_log_prob: stddev must be positive");
  Tensor point = Tensor::from({x.size()}, std::vector<double>(x.begin(), x.end()));
  Tensor sq = ad::sum(ad::square(ad::sub(point, mean)));
  double norm = static_cast<double>(x.size()) * (std::log(stddev) + 0.5 * std::log(2.0 * std::numbers::pi));
  return ad::add_scalar(ad::scale(sq, -0.5 / (stddev * stddev)), -norm);
}

}  // namespace pixforge::model
