#include "pixforge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "pixforge/autodiff.hpp"
#include "pixforge/text.hpp"

namespace pixforge::metrics {

namespace {

void require_nonempty(const char* what, const Image& p, const Image& g) {
  require_same_shape(what, p, g);
  if (p.size() == 0) throw std::invalid_argument(std::string(what) + ": empty image");
}

}  // namespace

double l1(const Image& p, const Image& g) {
  require_nonempty("l1", p, g);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p.pixels[i] - g.pixels[i]);
  return s / static_cast<double>(p.size());
}

double l2(const Image& p, const Image& g) {
  require_nonempty("l2", p, g);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p.pixels[i] - g.pixels[i];
    s += d * d;
  }
  return s / static_cast<double>(p.size());
}

double psnr_from_mse(double mse, double max_val) {
  if (!(max_val > 0.0)) throw std::invalid_argument("psnr: max_val must be positive");
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(max_val * max_val / mse);
}

double psnr(const Image& p, const Image& g, double max_val) { return psnr_from_mse(l2(p, g), max_val); }

std::vector<double> gaussian_window(std::size_t size, double sigma) {
  if (size == 0 || !(sigma > 0.0)) throw std::invalid_argument("gaussian_window: need positive size and sigma");
  std::vector<double> w(size * size);
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  double total = 0.0;
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double dy = static_cast<double>(y) - c, dx = static_cast<double>(x) - c;
      w[y * size + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      total += w[y * size + x];
    }
  for (double& v : w) v /= total;
  return w;
}

double ssim(const Image& p, const Image& g, const SsimOptions& o) {
  require_nonempty("ssim", p, g);
  if (p.height < o.window || p.width < o.window)
    throw std::invalid_argument("ssim: image " + p.shape_string() + " is smaller than the " +
                                std::to_string(o.window) + "x" + std::to_string(o.window) + " window");
  const std::vector<double> w = gaussian_window(o.window, o.sigma);
  const double c1 = (o.k1 * o.dynamic_range) * (o.k1 * o.dynamic_range);
  const double c2 = (o.k2 * o.dynamic_range) * (o.k2 * o.dynamic_range);
  const std::size_t rows = p.height - o.window + 1, cols = p.width - o.window + 1;
  double total = 0.0;
  for (std::size_t c = 0; c < p.channels; ++c)
    for (std::size_t r0 = 0; r0 < rows; ++r0)
      for (std::size_t q0 = 0; q0 < cols; ++q0) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (std::size_t y = 0; y < o.window; ++y)
          for (std::size_t x = 0; x < o.window; ++x) {
            const double wt = w[y * o.window + x];
            const double a = p.at(r0 + y, q0 + x, c), b = g.at(r0 + y, q0 + x, c);
            mx += wt * a;
            my += wt * b;
            sxx += wt * a * a;
            syy += wt * b * b;
            sxy += wt * a * b;
          }
        const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
        total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
  return total / static_cast<double>(p.channels * rows * cols);
}

MetricRow measure(std::string triple_id, const Image& p, const Image& g, const SsimOptions& options) {
  MetricRow row;
  row.triple_id = std::move(triple_id);
  row.l1 = l1(p, g);
  row.l2 = l2(p, g);
  row.ssim = ssim(p, g, options);
  row.psnr = psnr_from_mse(row.l2, options.dynamic_range);
  return row;
}

MetricRow MetricReport::mean() const {
  MetricRow m;
  m.triple_id = "#mean";
  if (rows.empty()) return m;
  for (const auto& r : rows) {
    m.l1 += r.l1;
    m.l2 += r.l2;
    m.ssim += r.ssim;
    m.psnr += r.psnr;
  }
  const double n = static_cast<double>(rows.size());
  m.l1 /= n;
  m.l2 /= n;
  m.ssim /= n;
  m.psnr /= n;
  return m;
}

std::string to_csv(const MetricReport& report) {
  std::ostringstream os;
  auto line = [&os](const MetricRow& r) {
    os << r.triple_id << ',' << format_number(r.l1) << ',' << format_number(r.l2) << ',' << format_number(r.ssim)
       << ',' << format_number(r.psnr) << '\n';
  };
  os << "triple_id,l1,l2,ssim,psnr\n";
  for (const auto& r : report.rows) line(r);
  line(report.mean());
  const auto& o = report.ssim_options;
  os << "#ssim,gaussian window " << o.window << "x" << o.window << " sigma " << format_number(o.sigma) << " k1 "
     << format_number(o.k1) << " k2 " << format_number(o.k2) << " L " << format_number(o.dynamic_range)
     << ",psnr identical-image cap " << format_number(kPsnrIdentical) << " dB\n";
  return os.str();
}

void write_csv(const std::filesystem::path& path, const MetricReport& report) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_csv(report);
}

std::vector<EvalItem> items_from_world(const world::EditWorld& world, std::span<const std::uint64_t> seeds,
                                       world::DifficultyMix difficulty) {
  std::vector<EvalItem> items;
  for (std::uint64_t seed : seeds) {
    world::EditSample s = world.sample(seed, world::difficulty_for(difficulty, seed));
    items.push_back({std::to_string(seed), std::move(s.triple), std::move(s.golden)});
  }
  return items;
}

std::vector<EvalItem> items_from_dir(const std::filesystem::path& dir, const world::EditWorld& world) {
  if (!std::filesystem::is_directory(dir)) throw std::invalid_argument("not a triple directory: " + dir.string());
  std::vector<std::filesystem::path> subs;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_directory() && entry.path().filename().string().rfind("triple_", 0) == 0) subs.push_back(entry.path());
  std::sort(subs.begin(), subs.end());
  std::vector<EvalItem> items;
  for (const auto& sub : subs) {
    EvalItem item;
    item.id = sub.filename().string().substr(7);
    item.triple.source = read_pgm(sub / "source.pgm");
    item.triple.mask = read_pgm(sub / "mask.pgm");
    std::ifstream f(sub / "instruction.txt");
    if (!f) throw std::runtime_error("missing " + (sub / "instruction.txt").string());
    std::string text;
    std::getline(f, text);
    std::vector<std::string> words;
    for (auto& w : split(trim(text), ' '))
      if (!w.empty()) words.push_back(w);
    item.triple.instruction = world::Instruction::encode(words, world.vocabulary(), world.config().max_tokens);
    items.push_back(std::move(item));
  }
  return items;
}

EvalResult evaluate_set(const model::Denoiser& denoiser, const model::ParamSet& params,
                        std::span<const EvalItem> items, double guidance_scale, std::uint64_t noise_seed) {
  EvalResult result;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const EvalItem& item = items[i];
    model::Rollout r = denoiser.rollout(params, item.triple.source, item.triple.instruction,
                                        ad::derive_key(noise_seed, {i}), guidance_scale);
    result.vs_source.rows.push_back(measure(item.id, r.output, item.triple.source));
    if (item.golden) result.vs_golden.rows.push_back(measure(item.id, r.output, *item.golden));
    result.outputs.push_back(std::move(r.output));
  }
  return result;
}

}  // namespace pixforge::metrics
