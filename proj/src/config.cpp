#include "pixforge/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <variant>

#include "pixforge/text.hpp"

namespace pixforge::config {

namespace {

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "integer keys share one member-pointer type");
using Member = std::variant<std::uint64_t RunConfig::*, double RunConfig::*, bool RunConfig::*, std::string RunConfig::*>;

struct Field {
  const char* key;
  Member member;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"seed", &RunConfig::seed},
      {"logdir", &RunConfig::logdir},
      {"num_epochs", &RunConfig::num_epochs},
      {"save_freq", &RunConfig::save_freq},
      {"num_checkpoint_limit", &RunConfig::num_checkpoint_limit},
      {"mixed_precision", &RunConfig::mixed_precision},
      {"allow_tf32", &RunConfig::allow_tf32},
      {"resume_from", &RunConfig::resume_from},
      {"use_lora", &RunConfig::use_lora},
      {"sample.num_steps", &RunConfig::sample_num_steps},
      {"sample.eta", &RunConfig::sample_eta},
      {"sample.guidance_scale", &RunConfig::sample_guidance_scale},
      {"sample.batch_size", &RunConfig::sample_batch_size},
      {"sample.num_batches_per_epoch", &RunConfig::sample_num_batches_per_epoch},
      {"train.batch_size", &RunConfig::train_batch_size},
      {"train.use_8bit_adam", &RunConfig::train_use_8bit_adam},
      {"train.learning_rate", &RunConfig::train_learning_rate},
      {"train.adam_beta1", &RunConfig::train_adam_beta1},
      {"train.adam_beta2", &RunConfig::train_adam_beta2},
      {"train.adam_weight_decay", &RunConfig::train_adam_weight_decay},
      {"train.adam_epsilon", &RunConfig::train_adam_epsilon},
      {"train.gradient_accumulation_steps", &RunConfig::train_gradient_accumulation_steps},
      {"train.max_grad_norm", &RunConfig::train_max_grad_norm},
      {"train.num_inner_epochs", &RunConfig::train_num_inner_epochs},
      {"train.cfg", &RunConfig::train_cfg},
      {"train.adv_clip_max", &RunConfig::train_adv_clip_max},
      {"train.clip_range", &RunConfig::train_clip_range},
      {"train.timestep_fraction", &RunConfig::train_timestep_fraction},
      {"train.triple_pool", &RunConfig::train_triple_pool},
      {"per_prompt_stat_tracking.buffer_size", &RunConfig::stat_buffer_size},
      {"per_prompt_stat_tracking.min_count", &RunConfig::stat_min_count},
      {"world.size", &RunConfig::world_size},
      {"world.difficulty", &RunConfig::world_difficulty},
      {"world.max_tokens", &RunConfig::world_max_tokens},
      {"model.patch", &RunConfig::model_patch},
      {"model.width", &RunConfig::model_width},
      {"model.heads", &RunConfig::model_heads},
      {"model.blocks", &RunConfig::model_blocks},
      {"model.ff_mult", &RunConfig::model_ff_mult},
      {"model.lora_rank", &RunConfig::model_lora_rank},
      {"model.lora_scale", &RunConfig::model_lora_scale},
      {"reward.tau", &RunConfig::reward_tau},
      {"reward.alpha", &RunConfig::reward_alpha},
      {"reward.include_attention", &RunConfig::reward_include_attention},
      {"reward.attention_source", &RunConfig::reward_attention_source},
      {"pretrain.steps", &RunConfig::pretrain_steps},
      {"pretrain.batch_size", &RunConfig::pretrain_batch_size},
      {"pretrain.learning_rate", &RunConfig::pretrain_learning_rate},
      {"pretrain.cond_dropout", &RunConfig::pretrain_cond_dropout},
      {"pretrained", &RunConfig::pretrained},
      {"eval.holdout", &RunConfig::eval_holdout},
  };
  return table;
}

const Field* find_field(std::string_view key) {
  if (key.rfind("config.", 0) == 0) key.remove_prefix(7);
  for (const auto& f : fields())
    if (key == f.key) return &f;
  return nullptr;
}

std::uint64_t parse_unsigned(const std::string& key, std::string_view text) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty())
    throw ConfigError(key + ": expected a nonnegative integer, got '" + std::string(text) + "'");
  return v;
}

double parse_real(const std::string& key, std::string_view text) {
  double v = 0.0;
  try {
    v = parse_number(text);
  } catch (const std::invalid_argument&) {
    throw ConfigError(key + ": expected a number, got '" + std::string(text) + "'");
  }
  if (!std::isfinite(v)) throw ConfigError(key + ": value must be finite");
  return v;
}

bool parse_bool(const std::string& key, std::string_view text) {
  if (text == "true" || text == "True" || text == "1") return true;
  if (text == "false" || text == "False" || text == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + std::string(text) + "'");
}

std::string parse_string(const std::string& key, std::string_view text) {
  if (text.empty() || text.front() != '"') return std::string(text);
  std::string out;
  std::size_t i = 1;
  for (; i < text.size() && text[i] != '"'; ++i) {
    if (text[i] == '\\' && i + 1 < text.size()) ++i;
    out += text[i];
  }
  if (i + 1 != text.size()) throw ConfigError(key + ": malformed quoted string");
  return out;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + '"';
}

// Drops a trailing comment that is outside quotes.
std::string_view strip_comment(std::string_view line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '\\' && quoted) {
      ++i;
      continue;
    }
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

template <typename F>
void check(bool ok, const std::string& key, F&& message) {
  if (!ok) throw ConfigError(key + ": " + message());
}

}  // namespace

std::vector<std::string> known_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.emplace_back(f.key);
  return keys;
}

void set_value(RunConfig& config, const std::string& raw_key, const std::string& value_text) {
  const Field* f = find_field(raw_key);
  if (f == nullptr) throw ConfigError("unknown config key '" + raw_key + "'");
  const std::string key = f->key;
  std::string_view text = trim(value_text);
  std::visit(
      [&](auto member) {
        using T = std::remove_reference_t<decltype(config.*member)>;
        if constexpr (std::is_same_v<T, bool>) config.*member = parse_bool(key, text);
        else if constexpr (std::is_same_v<T, double>) config.*member = parse_real(key, text);
        else if constexpr (std::is_same_v<T, std::string>) config.*member = parse_string(key, text);
        else config.*member = static_cast<T>(parse_unsigned(key, text));
      },
      f->member);
}

RunConfig parse(const std::string& text, const std::string& origin) {
  RunConfig config;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    std::string_view body = trim(strip_comment(line));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = origin + ":" + std::to_string(number);
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
    std::string key(trim(body.substr(0, eq)));
    const Field* f = find_field(key);
    if (f == nullptr) throw ConfigError(where + ": unknown config key '" + key + "'");
    if (!seen.insert(f->key).second) throw ConfigError(where + ": duplicate config key '" + std::string(f->key) + "'");
    try {
      set_value(config, key, std::string(body.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  return config;
}

RunConfig load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

std::string manifest(const RunConfig& config) {
  std::ostringstream os;
  for (const auto& f : fields()) {
    os << f.key << " = ";
    std::visit(
        [&](auto member) {
          const auto& v = config.*member;
          using T = std::remove_cvref_t<decltype(v)>;
          if constexpr (std::is_same_v<T, bool>) os << (v ? "true" : "false");
          else if constexpr (std::is_same_v<T, double>) os << format_number(v);
          else if constexpr (std::is_same_v<T, std::string>) os << quote(v);
          else os << v;
        },
        f.member);
    os << '\n';
  }
  return os.str();
}

void validate(const RunConfig& c) {
  check(c.mixed_precision == "no", "mixed_precision", [] { return std::string("only \"no\" is supported"); });
  check(!c.train_use_8bit_adam, "train.use_8bit_adam", [] { return std::string("only false is supported"); });
  check(c.num_epochs >= 1, "num_epochs", [] { return std::string("must be at least 1"); });
  check(c.num_checkpoint_limit >= 1, "num_checkpoint_limit", [] { return std::string("must be at least 1"); });
  check(c.sample_num_steps >= 1, "sample.num_steps", [] { return std::string("must be at least 1"); });
  check(c.sample_eta > 0.0, "sample.eta", [] { return std::string("must be positive (the policy needs noise)"); });
  check(c.sample_batch_size >= 1, "sample.batch_size", [] { return std::string("must be at least 1"); });
  check(c.sample_num_batches_per_epoch >= 1, "sample.num_batches_per_epoch",
        [] { return std::string("must be at least 1"); });
  check(c.train_batch_size >= 1, "train.batch_size", [] { return std::string("must be at least 1"); });
  check(c.train_learning_rate > 0.0, "train.learning_rate", [] { return std::string("must be positive"); });
  check(c.train_adam_beta1 >= 0.0 && c.train_adam_beta1 < 1.0, "train.adam_beta1",
        [] { return std::string("must lie in [0, 1)"); });
  check(c.train_adam_beta2 >= 0.0 && c.train_adam_beta2 < 1.0, "train.adam_beta2",
        [] { return std::string("must lie in [0, 1)"); });
  check(c.train_adam_epsilon > 0.0, "train.adam_epsilon", [] { return std::string("must be positive"); });
  check(c.train_adam_weight_decay >= 0.0, "train.adam_weight_decay", [] { return std::string("must be nonnegative"); });
  check(c.train_gradient_accumulation_steps >= 1, "train.gradient_accumulation_steps",
        [] { return std::string("must be at least 1"); });
  check(c.train_max_grad_norm > 0.0, "train.max_grad_norm", [] { return std::string("must be positive"); });
  check(c.train_num_inner_epochs >= 1, "train.num_inner_epochs", [] { return std::string("must be at least 1"); });
  check(c.train_adv_clip_max > 0.0, "train.adv_clip_max", [] { return std::string("must be positive"); });
  check(c.train_clip_range >= 0.0, "train.clip_range", [] { return std::string("must be nonnegative"); });
  check(c.train_timestep_fraction > 0.0 && c.train_timestep_fraction <= 1.0, "train.timestep_fraction",
        [] { return std::string("must lie in (0, 1]"); });
  check(c.stat_buffer_size >= 1, "per_prompt_stat_tracking.buffer_size", [] { return std::string("must be at least 1"); });
  check(c.stat_min_count >= 1, "per_prompt_stat_tracking.min_count", [] { return std::string("must be at least 1"); });
  check(c.world_size >= 8 && c.world_size % 4 == 0, "world.size",
        [] { return std::string("must be a multiple of 4, at least 8"); });
  check(c.world_max_tokens >= 7, "world.max_tokens", [] { return std::string("must be at least 7"); });
  try {
    world::parse_difficulty_mix(c.world_difficulty);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("world.difficulty: ") + e.what());
  }
  check(c.model_patch >= 1 && c.world_size % c.model_patch == 0, "model.patch",
        [] { return std::string("must divide world.size"); });
  check(c.model_heads >= 1 && c.model_width % c.model_heads == 0, "model.heads",
        [] { return std::string("must divide model.width"); });
  check(c.model_blocks >= 1, "model.blocks", [] { return std::string("must be at least 1"); });
  check(c.model_lora_rank >= 1, "model.lora_rank", [] { return std::string("must be at least 1"); });
  check(c.reward_tau >= 0.0, "reward.tau", [] { return std::string("must be nonnegative"); });
  try {
    reward::parse_attention_source(c.reward_attention_source);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("reward.attention_source: ") + e.what());
  }
  check(c.pretrain_batch_size >= 1, "pretrain.batch_size", [] { return std::string("must be at least 1"); });
  check(c.pretrain_learning_rate > 0.0, "pretrain.learning_rate", [] { return std::string("must be positive"); });
  check(c.pretrain_cond_dropout >= 0.0 && c.pretrain_cond_dropout <= 1.0, "pretrain.cond_dropout",
        [] { return std::string("must lie in [0, 1]"); });
  check(c.eval_holdout >= 1, "eval.holdout", [] { return std::string("must be at least 1"); });
  check(!c.logdir.empty(), "logdir", [] { return std::string("must not be empty"); });
  try {
    denoiser_config(c).validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
}

void apply_environment(RunConfig& config) {
  if (const char* env = std::getenv("PIXFORGE_LOGDIR"); env != nullptr && *env != '\0') config.logdir = env;
}

model::DenoiserConfig denoiser_config(const RunConfig& c) {
  model::DenoiserConfig d;
  d.image_size = c.world_size;
  d.channels = 1;
  d.patch = c.model_patch;
  d.width = c.model_width;
  d.heads = c.model_heads;
  d.blocks = c.model_blocks;
  d.ff_mult = c.model_ff_mult;
  d.vocab_size = world::Vocabulary().size();
  d.max_tokens = c.world_max_tokens;
  d.num_steps = c.sample_num_steps;
  d.lora_rank = c.model_lora_rank;
  d.lora_scale = c.model_lora_scale;
  return d;
}

model::NoiseSchedule noise_schedule(const RunConfig& c) {
  return model::NoiseSchedule::linear_log_snr(c.sample_num_steps, c.sample_eta);
}

world::WorldConfig world_config(const RunConfig& c) {
  world::WorldConfig w;
  w.canvas = c.world_size;
  w.max_tokens = c.world_max_tokens;
  return w;
}

model::PretrainConfig pretrain_config(const RunConfig& c) {
  model::PretrainConfig p;
  p.steps = c.pretrain_steps;
  p.batch_size = c.pretrain_batch_size;
  p.learning_rate = c.pretrain_learning_rate;
  p.weight_decay = c.train_adam_weight_decay;
  p.max_grad_norm = c.train_max_grad_norm;
  p.cond_dropout = c.pretrain_cond_dropout;
  p.seed = c.seed;
  p.difficulty = world::parse_difficulty_mix(c.world_difficulty);
  return p;
}

ppo::TrainConfig train_config(const RunConfig& c) {
  ppo::TrainConfig t;
  t.ppo.clip_range = c.train_clip_range;
  t.ppo.adv_clip_max = c.train_adv_clip_max;
  t.ppo.num_inner_epochs = c.train_num_inner_epochs;
  t.ppo.sample_batch_size = c.sample_batch_size;
  t.ppo.num_batches_per_epoch = c.sample_num_batches_per_epoch;
  t.ppo.train_batch_size = c.train_batch_size;
  t.ppo.gradient_accumulation_steps = c.train_gradient_accumulation_steps;
  t.ppo.timestep_fraction = c.train_timestep_fraction;
  t.ppo.cfg = c.train_cfg;
  t.ppo.guidance_scale = c.sample_guidance_scale;
  t.reward.tau = c.reward_tau;
  t.reward.alpha = c.reward_alpha;
  t.reward.include_attention = c.reward_include_attention;
  t.reward.attention_source = reward::parse_attention_source(c.reward_attention_source);
  t.optimizer.learning_rate = c.train_learning_rate;
  t.optimizer.beta1 = c.train_adam_beta1;
  t.optimizer.beta2 = c.train_adam_beta2;
  t.optimizer.epsilon = c.train_adam_epsilon;
  t.optimizer.weight_decay = c.train_adam_weight_decay;
  t.optimizer.max_grad_norm = c.train_max_grad_norm;
  t.num_epochs = c.num_epochs;
  t.save_freq = c.save_freq;
  t.num_checkpoint_limit = c.num_checkpoint_limit;
  t.seed = c.seed;
  t.use_lora = c.use_lora;
  t.buffer_size = c.stat_buffer_size;
  t.min_count = c.stat_min_count;
  t.difficulty = world::parse_difficulty_mix(c.world_difficulty);
  t.triple_pool = c.train_triple_pool;
  return t;
}

std::filesystem::path pretrained_path(const RunConfig& c) {
  if (!c.pretrained.empty()) return c.pretrained;
  return std::filesystem::path(c.logdir) / "pretrain" / "pretrained.ckpt";
}

}  // namespace pixforge::config
