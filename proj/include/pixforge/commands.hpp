#pragma once

// Subcommands behind the pixforge CLI. Each one writes only inside its run
// directory and holds a lock file there while it runs.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pixforge/config.hpp"
#include "pixforge/image.hpp"
#include "pixforge/reward.hpp"

namespace pixforge::cli {

class CommandError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommandOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::filesystem::path> resume;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> triples;  // eval: frozen triple directory
};

// Defaults, then the config file, then PIXFORGE_LOGDIR, then --seed.
// `seed_overrides_config` is false for sample, where --seed picks the triple.
config::RunConfig resolve_config(const CommandOptions& options, bool seed_overrides_config = true);

class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& run_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;
  static std::filesystem::path path_for(const std::filesystem::path& run_dir);

 private:
  std::filesystem::path path_;
};

int cmd_pretrain(const CommandOptions& options, std::ostream& out);
int cmd_train(const CommandOptions& options, std::ostream& out);
int cmd_eval(const CommandOptions& options, std::ostream& out);
int cmd_sample(const CommandOptions& options, std::ostream& out);
int cmd_plot(const CommandOptions& options, std::ostream& out);

struct MetricsTable {
  std::vector<double> epoch;
  std::vector<double> mean_reward;
  std::vector<double> mean_l_att;
  std::vector<double> mean_mae;
};

MetricsTable read_metrics(const std::filesystem::path& csv);

struct DecileSummary {
  std::size_t rows = 0;
  std::size_t decile_rows = 0;
  double first_reward = 0.0, last_reward = 0.0;
  double first_l_att = 0.0, last_l_att = 0.0;
};

// First and last max(1, ceil(n/10)) rows.
DecileSummary decile_summary(const MetricsTable& table);
// One <path> per series (mean_reward, mean_l_att).
std::string render_svg(const MetricsTable& table);

// Nearest-neighbour upsampling to size x size, scaled so the maximum is 1.
Image render_attention(const reward::AggregatedAttention& attention, std::size_t size);

}  // namespace pixforge::cli
