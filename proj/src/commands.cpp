#include "pixforge/commands.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "pixforge/checkpoint.hpp"
#include "pixforge/log.hpp"
#include "pixforge/metrics.hpp"
#include "pixforge/ppo.hpp"
#include "pixforge/pretrain.hpp"
#include "pixforge/text.hpp"

namespace pixforge::cli {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kInitTag = 0x696e'6974ULL;
constexpr std::uint64_t kEvalTag = 0x6576'616cULL;
constexpr std::uint64_t kSampleTag = 0x736d'706cULL;

fs::path run_dir(const CommandOptions& o, const config::RunConfig& c, const std::string& name) {
  return o.out ? *o.out : fs::path(c.logdir) / name;
}

void prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw CommandError("cannot create run directory " + dir.string());
  const fs::path probe = dir / ".pixforge.write-test";
  {
    std::ofstream f(probe);
    if (!f) throw CommandError("run directory is not writable: " + dir.string());
  }
  fs::remove(probe);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CommandError("cannot write " + path.string());
  f << text;
}

model::Checkpoint load_checkpoint(const fs::path& path, const char* what) {
  if (!fs::exists(path)) throw CommandError(std::string(what) + " not found: " + path.string());
  return model::Checkpoint::load(path);
}

model::ParamSet load_policy(const fs::path& path, const model::Denoiser& denoiser) {
  model::Checkpoint ckpt = load_checkpoint(path, "checkpoint");
  model::check_model_config(ckpt, denoiser.config());
  model::ParamSet params = model::restore_params(ckpt);
  denoiser.check_params(params);
  return params;
}

double mean_of(const std::vector<double>& v, std::size_t lo, std::size_t hi) {
  double s = 0.0;
  for (std::size_t i = lo; i < hi; ++i) s += v[i];
  return s / static_cast<double>(hi - lo);
}

}  // namespace

config::RunConfig resolve_config(const CommandOptions& options, bool seed_overrides_config) {
  config::RunConfig c = options.config ? config::load(*options.config) : config::RunConfig{};
  config::apply_environment(c);
  if (options.seed && seed_overrides_config) c.seed = *options.seed;
  config::validate(c);
  return c;
}

fs::path RunLock::path_for(const fs::path& run_dir) { return run_dir / ".pixforge.lock"; }

RunLock::RunLock(const fs::path& run_dir) : path_(path_for(run_dir)) {
  int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST)
      throw CommandError("run directory " + run_dir.string() + " is locked by another process (remove " +
                         path_.string() + " if that process is gone)");
    throw CommandError("cannot create lock file " + path_.string() + ": " + std::strerror(errno));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

int cmd_pretrain(const CommandOptions& options, std::ostream& out) {
  config::RunConfig c = resolve_config(options);
  const fs::path dir = run_dir(options, c, "pretrain");
  prepare_dir(dir);
  RunLock lock(dir);
  write_text(dir / "manifest.txt", config::manifest(c));

  model::Denoiser denoiser(config::denoiser_config(c), config::noise_schedule(c));
  world::EditWorld world(config::world_config(c));
  model::ParamSet init = model::init_params(denoiser.config(), ad::derive_key(c.seed, {kInitTag}), false);
  model::PretrainResult result = model::pretrain(denoiser, init, world, config::pretrain_config(c),
                                                 [](std::size_t step, double loss) {
                                                   if (step % 100 == 0) logger()->info("pretrain step {} loss {:.5f}", step, loss);
                                                 });

  std::ostringstream losses;
  losses << "step,loss\n";
  for (std::size_t i = 0; i < result.losses.size(); ++i) losses << i + 1 << ',' << format_number(result.losses[i]) << '\n';
  write_text(dir / "pretrain_loss.csv", losses.str());

  model::Checkpoint ckpt;
  model::store_model_config(ckpt, denoiser.config());
  model::store_params(ckpt, result.params);
  ckpt.save(dir / "pretrained.ckpt");

  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < std::min<std::size_t>(c.eval_holdout, 16); ++i) seeds.push_back(model::heldout_seed(i));
  const double heldout = model::heldout_denoising_loss(denoiser, result.params, world, seeds,
                                                       world::parse_difficulty_mix(c.world_difficulty));
  out << "wrote " << (dir / "pretrained.ckpt").string() << "\n";
  out << "held-out denoising loss " << format_number(heldout) << "\n";
  return 0;
}

int cmd_train(const CommandOptions& options, std::ostream& out) {
  config::RunConfig c = resolve_config(options);
  std::optional<fs::path> resume = options.resume;
  if (!resume && !c.resume_from.empty()) resume = fs::path(c.resume_from);
  if (resume && !fs::exists(*resume)) throw CommandError("resume checkpoint not found: " + resume->string());
  const fs::path pretrained = config::pretrained_path(c);
  if (!fs::exists(pretrained))
    throw CommandError("pretrained checkpoint not found: " + pretrained.string() + " (run pixforge pretrain first)");

  const fs::path dir = run_dir(options, c, "train");
  prepare_dir(dir);
  RunLock lock(dir);
  write_text(dir / "manifest.txt", config::manifest(c));

  model::Denoiser denoiser(config::denoiser_config(c), config::noise_schedule(c));
  world::EditWorld world(config::world_config(c));
  model::ParamSet reference = load_policy(pretrained, denoiser);
  ppo::Trainer trainer(denoiser, world, config::train_config(c));

  ppo::TrainState state;
  if (resume) {
    state = ppo::load_state(load_checkpoint(*resume, "resume checkpoint"), denoiser.config(), c.use_lora);
    denoiser.check_params(state.params);
    if (state.epoch >= c.num_epochs)
      out << "checkpoint is at epoch " << state.epoch << ", nothing left to train\n";
  } else {
    state = trainer.initial_state(reference);
  }

  ppo::TrainOutputs outputs;
  outputs.run_dir = dir;
  auto history = trainer.train(state, reference.frozen_copy(), outputs);
  if (!history.empty()) {
    const auto& last = history.back();
    out << "epoch " << last.epoch << " mean_reward " << format_number(last.mean_reward) << " mean_l_att "
        << format_number(last.mean_l_att) << "\n";
  }
  out << "wrote " << (dir / "final.ckpt").string() << "\n";
  return 0;
}

int cmd_eval(const CommandOptions& options, std::ostream& out) {
  config::RunConfig c = resolve_config(options);
  if (!options.checkpoint) throw CommandError("eval needs --checkpoint PATH");
  model::Denoiser denoiser(config::denoiser_config(c), config::noise_schedule(c));
  world::EditWorld world(config::world_config(c));
  model::ParamSet params = load_policy(*options.checkpoint, denoiser);

  std::vector<metrics::EvalItem> items;
  if (options.triples) {
    items = metrics::items_from_dir(*options.triples, world);
    if (items.empty()) throw CommandError("no triple_* directories in " + options.triples->string());
  } else {
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < c.eval_holdout; ++i) seeds.push_back(model::heldout_seed(i));
    items = metrics::items_from_world(world, seeds, world::parse_difficulty_mix(c.world_difficulty));
  }

  const fs::path dir = run_dir(options, c, "eval");
  prepare_dir(dir);
  RunLock lock(dir);
  write_text(dir / "manifest.txt", config::manifest(c));
  const double guidance = config::train_config(c).ppo.effective_guidance();
  metrics::EvalResult result =
      metrics::evaluate_set(denoiser, params, items, guidance, ad::derive_key(c.seed, {kEvalTag}));
  metrics::write_csv(dir / "eval.csv", result.vs_source);
  if (!result.vs_golden.rows.empty()) metrics::write_csv(dir / "eval_golden.csv", result.vs_golden);

  auto print = [&out](const char* label, const metrics::MetricReport& r) {
    const auto m = r.mean();
    out << label << " n=" << r.count() << " l1 " << format_number(m.l1) << " l2 " << format_number(m.l2) << " ssim "
        << format_number(m.ssim) << " psnr " << format_number(m.psnr) << "\n";
  };
  print("vs source", result.vs_source);
  if (!result.vs_golden.rows.empty()) print("vs golden", result.vs_golden);
  return 0;
}

int cmd_sample(const CommandOptions& options, std::ostream& out) {
  config::RunConfig c = resolve_config(options, false);
  if (!options.checkpoint) throw CommandError("sample needs --checkpoint PATH");
  const std::uint64_t triple_seed = options.seed ? *options.seed : model::heldout_seed(0);
  model::Denoiser denoiser(config::denoiser_config(c), config::noise_schedule(c));
  world::EditWorld world(config::world_config(c));
  model::ParamSet params = load_policy(*options.checkpoint, denoiser);

  const fs::path dir = options.out ? *options.out : fs::path(c.logdir) / "sample" / ("triple_" + std::to_string(triple_seed));
  prepare_dir(dir);
  RunLock lock(dir);

  world::EditSample sample =
      world.sample(triple_seed, world::difficulty_for(world::parse_difficulty_mix(c.world_difficulty), triple_seed));
  const auto& triple = sample.triple;
  const double guidance = config::train_config(c).ppo.effective_guidance();
  model::Rollout rollout = denoiser.rollout(params, triple.source, triple.instruction,
                                            ad::derive_key(c.seed, {kSampleTag, triple_seed}), guidance);
  reward::AttentionRecord record;
  for (const auto& step : rollout.steps) record.push_back(step.attention);
  const std::size_t grid = denoiser.config().grid();
  reward::AggregatedAttention attention = reward::aggregate_attention(record, triple.instruction.relevant, grid, grid);

  write_pgm(dir / "source.pgm", triple.source);
  write_pgm(dir / "mask.pgm", triple.mask);
  write_pgm(dir / "output.pgm", rollout.output);
  write_pgm(dir / "attention.pgm", render_attention(attention, c.world_size));
  write_text(dir / "instruction.txt", triple.instruction.text(world.vocabulary()) + "\n");

  world::AttentionMap gt = world::mask_to_groundtruth_attention(triple.mask, grid, grid);
  out << "instruction: " << triple.instruction.text(world.vocabulary()) << "\n";
  out << "l_att " << format_number(reward::attention_loss(gt, attention)) << " mae "
      << format_number(reward::clip_loss(triple.source, rollout.output, c.reward_tau).mae) << "\n";
  out << "wrote " << dir.string() << "\n";
  return 0;
}

MetricsTable read_metrics(const fs::path& csv) {
  std::ifstream in(csv);
  if (!in) throw CommandError("cannot read " + csv.string());
  std::string line;
  if (!std::getline(in, line)) throw CommandError(csv.string() + " is empty");
  auto header = split(trim(line), ',');
  auto column = [&header, &csv](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw CommandError(csv.string() + " has no column " + name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t ce = column("epoch"), cr = column("mean_reward"), ca = column("mean_l_att"), cm = column("mean_mae");
  MetricsTable t;
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (trim(line).empty()) continue;
    auto f = split(trim(line), ',');
    if (f.size() != header.size())
      throw CommandError(csv.string() + ":" + std::to_string(number) + ": expected " + std::to_string(header.size()) +
                         " fields");
    try {
      t.epoch.push_back(parse_number(f[ce]));
      t.mean_reward.push_back(parse_number(f[cr]));
      t.mean_l_att.push_back(parse_number(f[ca]));
      t.mean_mae.push_back(parse_number(f[cm]));
    } catch (const std::invalid_argument& e) {
      throw CommandError(csv.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  if (t.epoch.empty()) throw CommandError(csv.string() + " has no data rows");
  return t;
}

DecileSummary decile_summary(const MetricsTable& t) {
  DecileSummary s;
  s.rows = t.epoch.size();
  if (s.rows == 0) throw CommandError("decile summary of an empty table");
  s.decile_rows = std::max<std::size_t>(1, (s.rows + 9) / 10);
  s.first_reward = mean_of(t.mean_reward, 0, s.decile_rows);
  s.last_reward = mean_of(t.mean_reward, s.rows - s.decile_rows, s.rows);
  s.first_l_att = mean_of(t.mean_l_att, 0, s.decile_rows);
  s.last_l_att = mean_of(t.mean_l_att, s.rows - s.decile_rows, s.rows);
  return s;
}

std::string render_svg(const MetricsTable& t) {
  const double w = 640, h = 360, left = 60, right = 20, top = 30, bottom = 40;
  double x0 = *std::min_element(t.epoch.begin(), t.epoch.end());
  double x1 = *std::max_element(t.epoch.begin(), t.epoch.end());
  double y0 = std::min(*std::min_element(t.mean_reward.begin(), t.mean_reward.end()),
                       *std::min_element(t.mean_l_att.begin(), t.mean_l_att.end()));
  double y1 = std::max(*std::max_element(t.mean_reward.begin(), t.mean_reward.end()),
                       *std::max_element(t.mean_l_att.begin(), t.mean_l_att.end()));
  if (x1 == x0) {
    x0 -= 0.5;
    x1 += 0.5;
  }
  if (y1 == y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * (w - left - right); };
  auto py = [&](double y) { return h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom); };
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
     << ' ' << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\"" << h - bottom
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom
     << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << left << "\" y=\"" << h - 10 << "\" font-size=\"12\">epoch " << x0 << " to " << x1 << "</text>\n";
  os << "<text x=\"5\" y=\"" << top << "\" font-size=\"12\">" << y1 << "</text>\n";
  os << "<text x=\"5\" y=\"" << h - bottom << "\" font-size=\"12\">" << y0 << "</text>\n";
  struct Series {
    const char* name;
    const std::vector<double>* values;
    const char* color;
  };
  const Series series[] = {{"mean_reward", &t.mean_reward, "#1f77b4"}, {"mean_l_att", &t.mean_l_att, "#d62728"}};
  double legend_y = top;
  for (const auto& s : series) {
    os << "<path id=\"" << s.name << "\" fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"2\" d=\"";
    for (std::size_t i = 0; i < t.epoch.size(); ++i)
      os << (i == 0 ? "M" : " L") << px(t.epoch[i]) << ' ' << py((*s.values)[i]);
    if (t.epoch.size() == 1) os << " L" << px(t.epoch[0]) << ' ' << py((*s.values)[0]);
    os << "\"/>\n";
    os << "<text x=\"" << w - right - 120 << "\" y=\"" << legend_y << "\" font-size=\"12\" fill=\"" << s.color << "\">"
       << s.name << "</text>\n";
    legend_y += 16;
  }
  os << "</svg>\n";
  return os.str();
}

int cmd_plot(const CommandOptions& options, std::ostream& out) {
  config::RunConfig c = resolve_config(options);
  const fs::path dir = run_dir(options, c, "train");
  const fs::path csv = dir / "metrics.csv";
  if (!fs::exists(csv)) throw CommandError("no metrics.csv in " + dir.string());
  MetricsTable table = read_metrics(csv);
  RunLock lock(dir);
  write_text(dir / "reward_curve.svg", render_svg(table));
  DecileSummary s = decile_summary(table);
  out << "rows " << s.rows << " (decile of " << s.decile_rows << ")\n";
  out << "mean_reward first-decile " << format_number(s.first_reward) << " last-decile "
      << format_number(s.last_reward) << "\n";
  out << "mean_l_att first-decile " << format_number(s.first_l_att) << " last-decile " << format_number(s.last_l_att)
      << "\n";
  out << "wrote " << (dir / "reward_curve.svg").string() << "\n";
  return 0;
}

Image render_attention(const reward::AggregatedAttention& a, std::size_t size) {
  if (a.height == 0 || a.width == 0 || size % a.height != 0 || size % a.width != 0)
    throw std::invalid_argument("render_attention: map does not tile the image");
  const double peak = *std::max_element(a.values.begin(), a.values.end());
  Image img(size, size);
  const std::size_t sy = size / a.height, sx = size / a.width;
  for (std::size_t r = 0; r < size; ++r)
    for (std::size_t col = 0; col < size; ++col)
      img.at(r, col) = peak > 0.0 ? a.values[(r / sy) * a.width + col / sx] / peak : 0.0;
  return img;
}

}  // namespace pixforge::cli
