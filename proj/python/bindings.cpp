// Python bindings: world generation, reward, metrics, a rollout helper and
// the CLI subcommands. Images cross the boundary as 2-D float64 arrays.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "pixforge/checkpoint.hpp"
#include "pixforge/commands.hpp"
#include "pixforge/config.hpp"
#include "pixforge/metrics.hpp"
#include "pixforge/pretrain.hpp"
#include "pixforge/reward.hpp"
#include "pixforge/world.hpp"

namespace py = pybind11;
using namespace pixforge;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const Image& img) {
  if (img.channels != 1) throw std::invalid_argument("only single-channel images are exposed");
  Array out({img.height, img.width});
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

Image to_image(const Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
  Image img(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

Array map_to_array(std::size_t h, std::size_t w, const std::vector<double>& values) {
  Array out({h, w});
  std::copy(values.begin(), values.end(), out.mutable_data());
  return out;
}

world::Difficulty difficulty_of(const std::string& name) { return world::parse_difficulty(name); }

py::dict sample_dict(const world::EditWorld& w, std::uint64_t seed, const std::string& difficulty) {
  world::EditSample s = w.sample(seed, difficulty_of(difficulty));
  py::dict d;
  d["source"] = to_array(s.triple.source);
  d["mask"] = to_array(s.triple.mask);
  d["golden"] = to_array(s.golden);
  d["instruction"] = s.triple.instruction.text(w.vocabulary());
  d["tokens"] = s.triple.instruction.tokens;
  d["relevant"] = s.triple.instruction.relevant;
  d["kind"] = std::string(world::name_of(s.triple.kind));
  return d;
}

using Command = int (*)(const cli::CommandOptions&, std::ostream&);

std::string run_command(Command cmd, std::optional<std::string> config, std::optional<std::uint64_t> seed,
                        std::optional<std::string> out, std::optional<std::string> resume,
                        std::optional<std::string> checkpoint, std::optional<std::string> triples) {
  cli::CommandOptions o;
  if (config) o.config = *config;
  o.seed = seed;
  if (out) o.out = *out;
  if (resume) o.resume = *resume;
  if (checkpoint) o.checkpoint = *checkpoint;
  if (triples) o.triples = *triples;
  std::ostringstream text;
  {
    py::gil_scoped_release release;
    cmd(o, text);
  }
  return text.str();
}

}  // namespace

PYBIND11_MODULE(_pixforge, m) {
  m.doc() = "RL-guided instruction editing on a toy diffusion model";

  py::register_exception<config::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<cli::CommandError>(m, "CommandError", PyExc_RuntimeError);
  py::register_exception<model::CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);

  py::class_<world::EditWorld>(m, "EditWorld")
      .def(py::init([](std::size_t size, std::size_t max_tokens) {
             world::WorldConfig c;
             c.canvas = size;
             c.max_tokens = max_tokens;
             return world::EditWorld(c);
           }),
           py::arg("size") = 16, py::arg("max_tokens") = 8)
      .def("sample", &sample_dict, py::arg("seed"), py::arg("difficulty") = "basic")
      .def("vocabulary", [](const world::EditWorld& w) {
        std::vector<std::string> tokens;
        for (world::TokenId i = 0; i < w.vocabulary().size(); ++i) tokens.push_back(w.vocabulary().token(i));
        return tokens;
      });

  m.def(
      "groundtruth_attention",
      [](const Array& mask, std::size_t h, std::size_t w) {
        auto a = world::mask_to_groundtruth_attention(to_image(mask), h, w);
        return map_to_array(a.height, a.width, a.values);
      },
      py::arg("mask"), py::arg("height"), py::arg("width"));

  m.def(
      "attention_loss",
      [](const Array& gt, const Array& model) {
        Image g = to_image(gt), p = to_image(model);
        world::AttentionMap a{g.height, g.width, g.pixels};
        reward::AggregatedAttention b;
        b.height = p.height;
        b.width = p.width;
        b.values = p.pixels;
        return reward::attention_loss(a, b);
      },
      py::arg("ground_truth"), py::arg("model"));
  m.def(
      "clip_loss",
      [](const Array& source, const Array& output, double tau) {
        auto c = reward::clip_loss(to_image(source), to_image(output), tau);
        return py::make_tuple(c.mae, c.l_clip);
      },
      py::arg("source"), py::arg("output"), py::arg("tau") = 0.05);
  m.def(
      "total_reward",
      [](double l_att, double mae, double l_clip, double alpha, bool include_attention) {
        return reward::total_reward(l_att, {mae, l_clip}, alpha, include_attention).total;
      },
      py::arg("l_att"), py::arg("mae"), py::arg("l_clip"), py::arg("alpha") = -1.0, py::arg("include_attention") = true);

  m.def("l1", [](const Array& a, const Array& b) { return metrics::l1(to_image(a), to_image(b)); });
  m.def("l2", [](const Array& a, const Array& b) { return metrics::l2(to_image(a), to_image(b)); });
  m.def(
      "psnr", [](const Array& a, const Array& b, double max_val) { return metrics::psnr(to_image(a), to_image(b), max_val); },
      py::arg("a"), py::arg("b"), py::arg("max_val") = 1.0);
  m.def("ssim", [](const Array& a, const Array& b) { return metrics::ssim(to_image(a), to_image(b)); });

  m.def(
      "rollout",
      [](const std::string& checkpoint, const std::string& config_path, std::uint64_t triple_seed,
         const std::string& difficulty, std::uint64_t noise_seed) {
        config::RunConfig c = config_path.empty() ? config::RunConfig{} : config::load(config_path);
        config::validate(c);
        model::Denoiser den(config::denoiser_config(c), config::noise_schedule(c));
        model::Checkpoint ck = model::Checkpoint::load(checkpoint);
        model::check_model_config(ck, den.config());
        model::ParamSet params = model::restore_params(ck);
        den.check_params(params);
        world::EditWorld w(config::world_config(c));
        world::EditTriple t = w.generate_triple(triple_seed, difficulty_of(difficulty));
        model::Rollout r =
            den.rollout(params, t.source, t.instruction, noise_seed, config::train_config(c).ppo.effective_guidance());
        std::vector<double> log_probs;
        for (const auto& s : r.steps) log_probs.push_back(s.log_prob);
        py::dict d;
        d["output"] = to_array(r.output);
        d["source"] = to_array(t.source);
        d["log_probs"] = log_probs;
        return d;
      },
      py::arg("checkpoint"), py::arg("config") = "", py::arg("triple_seed") = model::heldout_seed(0),
      py::arg("difficulty") = "multi-object", py::arg("noise_seed") = 0);

  m.def("config_keys", &config::known_keys);
  m.def(
      "config_manifest",
      [](const std::string& path) {
        config::RunConfig c = path.empty() ? config::RunConfig{} : config::load(path);
        return config::manifest(c);
      },
      py::arg("path") = "");

  auto bind = [&m](const char* name, Command cmd) {
    m.def(
        name,
        [cmd](std::optional<std::string> config, std::optional<std::uint64_t> seed, std::optional<std::string> out,
              std::optional<std::string> resume, std::optional<std::string> checkpoint,
              std::optional<std::string> triples) { return run_command(cmd, config, seed, out, resume, checkpoint, triples); },
        py::arg("config") = py::none(), py::arg("seed") = py::none(), py::arg("out") = py::none(),
        py::arg("resume") = py::none(), py::arg("checkpoint") = py::none(), py::arg("triples") = py::none());
  };
  bind("pretrain", cli::cmd_pretrain);
  bind("train", cli::cmd_train);
  bind("evaluate", cli::cmd_eval);
  bind("sample", cli::cmd_sample);
  bind("plot", cli::cmd_plot);
}
