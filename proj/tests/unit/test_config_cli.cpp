#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pixforge/commands.hpp"
#include "pixforge/config.hpp"
#include "support.hpp"

using namespace pixforge;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("pixforge_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::size_t count_of(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

cli::MetricsTable table(std::size_t rows) {
  cli::MetricsTable t;
  for (std::size_t i = 0; i < rows; ++i) {
    t.epoch.push_back(static_cast<double>(i + 1));
    t.mean_reward.push_back(0.1 * static_cast<double>(i));
    t.mean_l_att.push_back(0.5 + 0.01 * static_cast<double>(i));
    t.mean_mae.push_back(0.05);
  }
  return t;
}

}  // namespace

TEST_CASE("defaults follow the training-details table") {
  config::RunConfig c;
  CHECK(c.seed == 42);
  CHECK(c.num_epochs == 200);
  CHECK(c.save_freq == 50);
  CHECK(c.num_checkpoint_limit == 5);
  CHECK(c.mixed_precision == "no");
  CHECK(c.use_lora);
  CHECK(c.sample_num_steps == 50);
  CHECK(c.sample_eta == 1.0);
  CHECK(c.sample_guidance_scale == 5.0);
  CHECK(c.sample_batch_size == 1);
  CHECK(c.sample_num_batches_per_epoch == 2);
  CHECK(c.train_batch_size == 1);
  CHECK(c.train_learning_rate == 2e-4);
  CHECK(c.train_adam_beta1 == 0.9);
  CHECK(c.train_adam_beta2 == 0.999);
  CHECK(c.train_adam_weight_decay == 1e-4);
  CHECK(c.train_adam_epsilon == 1e-8);
  CHECK(c.train_gradient_accumulation_steps == 1);
  CHECK(c.train_max_grad_norm == 1.0);
  CHECK(c.train_num_inner_epochs == 1);
  CHECK(c.train_cfg);
  CHECK(c.train_adv_clip_max == 5.0);
  CHECK(c.train_clip_range == 1e-4);
  CHECK(c.train_timestep_fraction == 1.0);
  CHECK(c.reward_alpha == -1.0);
  CHECK_NOTHROW(config::validate(c));
}

TEST_CASE("shipped profiles load and validate") {
  for (const char* name : {"desk.cfg", "table.cfg"}) {
    auto c = config::load(fs::path(PIXFORGE_TEST_DATA) / ".." / ".." / "configs" / name);
    CHECK_NOTHROW(config::validate(c));
  }
}

TEST_CASE("parse handles comments, quotes and the config. prefix") {
  auto c = config::parse(
      "# header\n"
      "config.seed = 7   # trailing\n"
      "logdir = \"runs/a # b\"\n"
      "\n"
      "train.learning_rate = 3e-4\n"
      "use_lora = false\n");
  CHECK(c.seed == 7);
  CHECK(c.logdir == "runs/a # b");
  CHECK(c.train_learning_rate == 3e-4);
  CHECK_FALSE(c.use_lora);
}

TEST_CASE("unknown and duplicate keys name the line") {
  CHECK_THROWS_WITH_AS(config::parse("seed = 1\nbogus = 2\n", "x.cfg"), doctest::Contains("x.cfg:2"),
                       config::ConfigError);
  CHECK_THROWS_WITH_AS(config::parse("seed = 1\nseed = 2\n"), doctest::Contains("duplicate"), config::ConfigError);
  CHECK_THROWS_AS(config::parse("seed = -1\n"), config::ConfigError);
  CHECK_THROWS_AS(config::parse("sample.eta = nan\n"), config::ConfigError);
  CHECK_THROWS_AS(config::parse("just words\n"), config::ConfigError);
}

TEST_CASE("unsupported precision options are rejected") {
  config::RunConfig c;
  c.train_use_8bit_adam = true;
  CHECK_THROWS_AS(config::validate(c), config::ConfigError);
  c = {};
  c.mixed_precision = "fp16";
  CHECK_THROWS_AS(config::validate(c), config::ConfigError);
  c = {};
  c.world_size = 18;
  CHECK_THROWS_AS(config::validate(c), config::ConfigError);
  c = {};
  c.sample_eta = 0.0;
  CHECK_THROWS_AS(config::validate(c), config::ConfigError);
}

TEST_CASE("property: manifest parses back to the same config") {
  testing::Gen g(5);
  for (int trial = 0; trial < 50; ++trial) {
    config::RunConfig c;
    c.seed = g.bits();
    c.num_epochs = 1 + g.index(1000);
    c.train_learning_rate = g.uniform(1e-6, 1e-1);
    c.sample_guidance_scale = g.uniform(0.5, 9.0);
    c.reward_tau = g.uniform(0.0, 0.3);
    c.reward_include_attention = g.index(2) == 0;
    c.logdir = "dir with spaces/" + std::to_string(g.index(100));
    c.world_difficulty = g.index(2) ? "basic" : "multi-object";
    CHECK_NOTHROW(config::validate(c));
    CHECK(config::parse(config::manifest(c)) == c);
  }
  CHECK(config::known_keys().size() > 40);
}

TEST_CASE("environment overrides logdir") {
  config::RunConfig c;
  ::setenv("PIXFORGE_LOGDIR", "/tmp/elsewhere", 1);
  config::apply_environment(c);
  ::unsetenv("PIXFORGE_LOGDIR");
  CHECK(c.logdir == "/tmp/elsewhere");
  CHECK(config::pretrained_path(c) == fs::path("/tmp/elsewhere/pretrain/pretrained.ckpt"));
}

TEST_CASE("converted configs carry the table values") {
  config::RunConfig c;
  auto t = config::train_config(c);
  CHECK(t.ppo.clip_range == 1e-4);
  CHECK(t.ppo.effective_guidance() == 5.0);
  CHECK(t.optimizer.learning_rate == 2e-4);
  CHECK(config::denoiser_config(c).num_steps == 50);
  CHECK(config::noise_schedule(c).steps() == 50);
  c.train_cfg = false;
  CHECK(config::train_config(c).ppo.effective_guidance() == 1.0);
}

TEST_CASE("missing config file is an error") {
  cli::CommandOptions o;
  o.config = "/nonexistent/pixforge.cfg";
  CHECK_THROWS_AS(cli::resolve_config(o), config::ConfigError);
}

TEST_CASE("seed flag overrides the config except for sample") {
  auto dir = scratch("seed");
  std::ofstream(dir / "a.cfg") << "seed = 3\n";
  cli::CommandOptions o;
  o.config = dir / "a.cfg";
  o.seed = 9;
  CHECK(cli::resolve_config(o).seed == 9);
  CHECK(cli::resolve_config(o, false).seed == 3);
  fs::remove_all(dir);
}

TEST_CASE("run lock is exclusive and released") {
  auto dir = scratch("lock");
  {
    cli::RunLock lock(dir);
    CHECK(fs::exists(cli::RunLock::path_for(dir)));
    CHECK_THROWS_AS(cli::RunLock{dir}, cli::CommandError);
  }
  CHECK_FALSE(fs::exists(cli::RunLock::path_for(dir)));
  fs::remove_all(dir);
}

TEST_CASE("train refuses to start without a pretrained checkpoint") {
  auto dir = scratch("nopre");
  std::ofstream(dir / "a.cfg") << "logdir = \"" << (dir / "logs").string() << "\"\n";
  cli::CommandOptions o;
  o.config = dir / "a.cfg";
  std::ostringstream out;
  CHECK_THROWS_WITH_AS(cli::cmd_train(o, out), doctest::Contains("pretrain"), cli::CommandError);
  o.checkpoint = dir / "missing.ckpt";
  CHECK_THROWS_AS(cli::cmd_eval(o, out), cli::CommandError);
  fs::remove_all(dir);
}

TEST_CASE("decile summaries") {
  auto one = cli::decile_summary(table(1));
  CHECK(one.decile_rows == 1);
  CHECK(one.first_reward == one.last_reward);

  auto twenty = cli::decile_summary(table(20));
  CHECK(twenty.decile_rows == 2);
  CHECK(twenty.first_reward == doctest::Approx(0.05));
  CHECK(twenty.last_reward == doctest::Approx(1.85));
  CHECK(twenty.last_l_att > twenty.first_l_att);

  CHECK(cli::decile_summary(table(11)).decile_rows == 2);
  CHECK_THROWS(cli::decile_summary(table(0)));
}

TEST_CASE("svg has one path per series") {
  for (std::size_t rows : {1u, 2u, 60u}) {
    const std::string svg = cli::render_svg(table(rows));
    CHECK(count_of(svg, "<path") == 2);
    CHECK(svg.find("mean_reward") != std::string::npos);
    CHECK(svg.find("mean_l_att") != std::string::npos);
    CHECK(svg.rfind("<svg", 0) == 0);
  }
}

TEST_CASE("metrics csv reading") {
  auto dir = scratch("csv");
  std::ofstream(dir / "m.csv") << "epoch,mean_reward,mean_l_att,mean_mae,mean_ratio,clip_fraction,grad_norm\n"
                                  "1,0.1,0.4,0.05,1,0,2\n2,0.2,0.5,0.04,1,0,2\n";
  auto t = cli::read_metrics(dir / "m.csv");
  CHECK(t.epoch == std::vector<double>{1, 2});
  CHECK(t.mean_l_att == std::vector<double>{0.4, 0.5});
  std::ofstream(dir / "bad.csv") << "epoch,mean_reward\n1,2\n";
  CHECK_THROWS_AS(cli::read_metrics(dir / "bad.csv"), cli::CommandError);
  std::ofstream(dir / "empty.csv") << "epoch,mean_reward,mean_l_att,mean_mae\n";
  CHECK_THROWS_AS(cli::read_metrics(dir / "empty.csv"), cli::CommandError);

  cli::CommandOptions o;
  o.out = dir;
  fs::copy_file(dir / "m.csv", dir / "metrics.csv");
  std::ostringstream out;
  CHECK(cli::cmd_plot(o, out) == 0);
  CHECK(fs::exists(dir / "reward_curve.svg"));
  CHECK(out.str().find("mean_reward first-decile 0.1 last-decile 0.2") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("attention render is upsampled and peak-normalized") {
  reward::AggregatedAttention a;
  a.height = a.width = 2;
  a.values = {0.1, 0.4, 0.2, 0.3};
  Image img = cli::render_attention(a, 8);
  CHECK(img.height == 8);
  CHECK(img.at(0, 0) == doctest::Approx(0.25));
  CHECK(img.at(0, 7) == 1.0);
  CHECK(img.at(7, 0) == doctest::Approx(0.5));
  CHECK_THROWS(cli::render_attention(a, 7));
}
