#pragma once

// Pixel-difference and structural image metrics, plus batch evaluation of a
// policy over held-out edit triples.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pixforge/denoiser.hpp"
#include "pixforge/image.hpp"
#include "pixforge/world.hpp"

namespace pixforge::metrics {

// Returned by psnr when the two images are identical.
inline constexpr double kPsnrIdentical = 100.0;

struct SsimOptions {
  std::size_t window = 7;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

double l1(const Image& p, const Image& g);
double l2(const Image& p, const Image& g);
double psnr(const Image& p, const Image& g, double max_val = 1.0);
double psnr_from_mse(double mse, double max_val = 1.0);
// Gaussian-weighted SSIM averaged over every full window position and channel.
double ssim(const Image& p, const Image& g, const SsimOptions& options = {});
std::vector<double> gaussian_window(std::size_t size, double sigma);

struct MetricRow {
  std::string triple_id;
  double l1 = 0.0;
  double l2 = 0.0;
  double ssim = 0.0;
  double psnr = 0.0;
};

MetricRow measure(std::string triple_id, const Image& p, const Image& g, const SsimOptions& options = {});

struct MetricReport {
  std::vector<MetricRow> rows;
  SsimOptions ssim_options;

  std::size_t count() const { return rows.size(); }
  MetricRow mean() const;  // triple_id is "#mean"
};

// triple_id,l1,l2,ssim,psnr rows, then the "#mean" line and a "#ssim" line
// naming the window and constants.
std::string to_csv(const MetricReport& report);
void write_csv(const std::filesystem::path& path, const MetricReport& report);

struct EvalItem {
  std::string id;
  world::EditTriple triple;
  std::optional<Image> golden;
};

std::vector<EvalItem> items_from_world(const world::EditWorld& world, std::span<const std::uint64_t> seeds,
                                       world::DifficultyMix difficulty);
// Reads triple_*/{source.pgm,mask.pgm,instruction.txt} as written by EditWorld::freeze.
std::vector<EvalItem> items_from_dir(const std::filesystem::path& dir, const world::EditWorld& world);

struct EvalResult {
  MetricReport vs_source;
  MetricReport vs_golden;  // only items with a golden render
  std::vector<Image> outputs;
};

// Rolls the policy out on each item; rollout noise is keyed by (noise_seed, item index).
EvalResult evaluate_set(const model::Denoiser& denoiser, const model::ParamSet& params,
                        std::span<const EvalItem> items, double guidance_scale, std::uint64_t noise_seed);

}  // namespace pixforge::metrics
