#include <doctest.h>

#include <cmath>

#include "pixforge/denoiser.hpp"
#include "pixforge/metrics.hpp"
#include "support.hpp"

using namespace pixforge;
using namespace pixforge::metrics;

namespace {

Image random_image(testing::Gen& g, std::size_t h, std::size_t w, std::size_t c = 1) {
  Image img(h, w, c);
  for (auto& v : img.pixels) v = g.uniform(0.0, 1.0);
  return img;
}

}  // namespace

TEST_CASE("l1 and l2 on a constant offset") {
  Image a(4, 4, 1, 0.2), b(4, 4, 1, 0.5);
  CHECK(l1(a, b) == doctest::Approx(0.3));
  CHECK(l2(a, b) == doctest::Approx(0.09));
  Image c(4, 4, 1, 0.0), d(4, 4, 1, 0.0);
  d.at(0, 0) = 1.0;
  d.at(3, 3) = -1.0;
  CHECK(l1(c, d) == 2.0 / 16);
  CHECK(l2(c, d) == 2.0 / 16);
}

TEST_CASE("psnr reference values") {
  CHECK(psnr_from_mse(0.01, 1.0) == 20.0);
  CHECK(psnr_from_mse(0.0025, 1.0) == doctest::Approx(26.0206).epsilon(1e-5));
  CHECK(psnr_from_mse(0.0, 1.0) == kPsnrIdentical);
  CHECK(psnr_from_mse(0.04, 2.0) == doctest::Approx(20.0));
  CHECK_THROWS(psnr_from_mse(0.1, 0.0));
}

TEST_CASE("identical images") {
  testing::Gen g(1);
  Image a = random_image(g, 9, 9);
  CHECK(l1(a, a) == 0.0);
  CHECK(psnr(a, a) == kPsnrIdentical);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("gaussian window is normalized and symmetric") {
  auto w = gaussian_window(7, 1.5);
  double s = 0;
  for (double v : w) s += v;
  CHECK(s == doctest::Approx(1.0));
  for (std::size_t y = 0; y < 7; ++y)
    for (std::size_t x = 0; x < 7; ++x) {
      CHECK(w[y * 7 + x] == doctest::Approx(w[x * 7 + y]));
      CHECK(w[y * 7 + x] == doctest::Approx(w[(6 - y) * 7 + (6 - x)]));
    }
  CHECK(w[3 * 7 + 3] > w[0]);
}

TEST_CASE("property: ssim is symmetric and at most one") {
  testing::Gen g(2);
  for (int trial = 0; trial < 30; ++trial) {
    Image a = random_image(g, 8 + g.index(5), 8 + g.index(5));
    Image b = a;
    for (auto& v : b.pixels) v = std::clamp(v + g.uniform(-0.4, 0.4), 0.0, 1.0);
    CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
    CHECK(ssim(a, b) <= 1.0 + 1e-12);
    CHECK(l1(a, b) == doctest::Approx(l1(b, a)));
  }
}

TEST_CASE("property: permuting channels leaves every metric unchanged") {
  testing::Gen g(3);
  for (int trial = 0; trial < 10; ++trial) {
    Image a = random_image(g, 8, 8, 3), b = random_image(g, 8, 8, 3);
    Image pa = a, pb = b;
    for (std::size_t r = 0; r < 8; ++r)
      for (std::size_t c = 0; c < 8; ++c)
        for (std::size_t ch = 0; ch < 3; ++ch) {
          pa.at(r, c, ch) = a.at(r, c, (ch + 1) % 3);
          pb.at(r, c, ch) = b.at(r, c, (ch + 1) % 3);
        }
    CHECK(ssim(pa, pb) == doctest::Approx(ssim(a, b)).epsilon(1e-12));
    CHECK(l2(pa, pb) == doctest::Approx(l2(a, b)).epsilon(1e-12));
    CHECK(psnr(pa, pb) == doctest::Approx(psnr(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("shape mismatches and undersized images are rejected") {
  CHECK_THROWS_AS(l1(Image(4, 4), Image(4, 5)), std::invalid_argument);
  CHECK_THROWS_AS(ssim(Image(6, 6), Image(6, 6)), std::invalid_argument);
  CHECK_THROWS_AS(l2(Image(), Image()), std::invalid_argument);
}

TEST_CASE("csv report layout") {
  MetricReport r;
  r.rows.push_back({"1", 0.1, 0.02, 0.9, 17.0});
  r.rows.push_back({"2", 0.3, 0.04, 0.7, 14.0});
  MetricRow m = r.mean();
  CHECK(m.triple_id == "#mean");
  CHECK(m.l1 == doctest::Approx(0.2));
  CHECK(m.psnr == doctest::Approx(15.5));
  const std::string csv = to_csv(r);
  CHECK(csv.rfind("triple_id,l1,l2,ssim,psnr\n1,0.1,0.02,0.9,17\n2,0.3,0.04,0.7,14\n#mean,", 0) == 0);
  CHECK(csv.find("#ssim,gaussian window 7x7 sigma 1.5") != std::string::npos);
}

TEST_CASE("frozen triples load for evaluation") {
  world::EditWorld w;
  auto items = items_from_dir(std::filesystem::path(PIXFORGE_TEST_DATA), w);
  REQUIRE(items.size() == 1);
  CHECK(items[0].id == "0");
  CHECK_FALSE(items[0].golden.has_value());
  CHECK(items[0].triple.instruction == w.generate_triple(0, world::Difficulty::basic).instruction);
  CHECK_THROWS(items_from_dir("/nonexistent/triples", w));
}

TEST_CASE("evaluate_set scores every item against source and golden") {
  model::DenoiserConfig c;
  c.num_steps = 3;
  model::Denoiser d(c, model::NoiseSchedule::linear_log_snr(3, 1.0));
  model::ParamSet p = model::init_params(c, 1, false);
  world::EditWorld w;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  auto items = items_from_world(w, seeds, world::DifficultyMix::mixed);
  EvalResult a = evaluate_set(d, p, items, 2.0, 9);
  CHECK(a.vs_source.count() == 3);
  CHECK(a.vs_golden.count() == 3);
  CHECK(a.vs_source.rows[1].l1 == doctest::Approx(l1(a.outputs[1], items[1].triple.source)));
  EvalResult b = evaluate_set(d, p, items, 2.0, 9);
  CHECK(to_csv(a.vs_source) == to_csv(b.vs_source));
}
