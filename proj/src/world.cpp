#include "pixforge/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "pixforge/autodiff.hpp"

namespace pixforge::world {

namespace {

constexpr const char* kTokens[] = {
    "<pad>", "<start>", "add",   "remove", "replace", "make", "with",   "square", "circle",
    "triangle", "left", "right", "top",    "bottom",  "center", "dark", "gray",   "bright",
};

constexpr std::uint64_t kGeneratorTag = 0x7769726c64ULL;

bool overlaps(const PlacedShape& a, const PlacedShape& b) {
  return a.row < b.row + b.size && b.row < a.row + a.size && a.col < b.col + b.size && b.col < a.col + a.size;
}

std::string seed_context(std::uint64_t seed) { return "seed " + std::to_string(seed); }

class Placer {
 public:
  Placer(const WorldConfig& config, std::uint64_t seed, ad::CounterRng& rng)
      : config_(config), seed_(seed), rng_(rng) {}

  PlacedShape centered(ShapeKind kind, std::size_t color, Cell cell) const {
    Region r = cell_region(cell, config_.canvas);
    std::size_t s = config_.shape_size;
    if (s > r.row1 - r.row0 || s > r.col1 - r.col0)
      throw PlacementError("cannot place a size-" + std::to_string(s) + " shape in cell " +
                           std::string(name_of(cell)) + " for " + seed_context(seed_));
    return {kind, color, cell, r.row0 + (r.row1 - r.row0 - s) / 2, r.col0 + (r.col1 - r.col0 - s) / 2, s};
  }

  PlacedShape jittered(ShapeKind kind, std::size_t color, Cell cell, const std::vector<PlacedShape>& taken) {
    Region r = cell_region(cell, config_.canvas);
    std::size_t s = config_.shape_size;
    if (s > r.row1 - r.row0 || s > r.col1 - r.col0)
      throw PlacementError("cannot place a size-" + std::to_string(s) + " shape in cell " +
                           std::string(name_of(cell)) + " for " + seed_context(seed_));
    for (std::size_t attempt = 0; attempt < config_.max_retries; ++attempt) {
      PlacedShape p{kind, color, cell, r.row0 + rng_.next_index(r.row1 - r.row0 - s + 1),
                    r.col0 + rng_.next_index(r.col1 - r.col0 - s + 1), s};
      if (std::any_of(taken.begin(), taken.end(), [&](const PlacedShape& t) { return overlaps(p, t); })) continue;
      return p;
    }
    throw PlacementError("placement unsatisfiable after " + std::to_string(config_.max_retries) +
                         " retries in cell " + std::string(name_of(cell)) + " for " + seed_context(seed_));
  }

 private:
  const WorldConfig& config_;
  std::uint64_t seed_;
  ad::CounterRng& rng_;
};

}  // namespace

std::string_view name_of(ShapeKind k) {
  switch (k) {
    case ShapeKind::square: return "square";
    case ShapeKind::circle: return "circle";
    case ShapeKind::triangle: return "triangle";
  }
  return "?";
}

std::string_view name_of(Cell c) {
  switch (c) {
    case Cell::left: return "left";
    case Cell::right: return "right";
    case Cell::top: return "top";
    case Cell::bottom: return "bottom";
    case Cell::center: return "center";
  }
  return "?";
}

std::string_view name_of(EditKind k) {
  switch (k) {
    case EditKind::insert: return "insert";
    case EditKind::remove: return "remove";
    case EditKind::replace: return "replace";
    case EditKind::transform: return "transform";
  }
  return "?";
}

std::string_view name_of(Difficulty d) { return d == Difficulty::basic ? "basic" : "multi-object"; }

std::string_view color_name(std::size_t color) {
  static constexpr const char* names[kColorCount] = {"dark", "gray", "bright"};
  if (color >= kColorCount) throw std::out_of_range("color id " + std::to_string(color));
  return names[color];
}

Difficulty parse_difficulty(std::string_view name) {
  if (name == "basic") return Difficulty::basic;
  if (name == "multi-object") return Difficulty::multi_object;
  throw std::invalid_argument("unknown difficulty '" + std::string(name) + "' (expected basic or multi-object)");
}

DifficultyMix parse_difficulty_mix(std::string_view name) {
  if (name == "mixed") return DifficultyMix::mixed;
  return parse_difficulty(name) == Difficulty::basic ? DifficultyMix::basic : DifficultyMix::multi_object;
}

std::string_view name_of(DifficultyMix m) {
  switch (m) {
    case DifficultyMix::basic: return "basic";
    case DifficultyMix::multi_object: return "multi-object";
    case DifficultyMix::mixed: return "mixed";
  }
  return "?";
}

Difficulty difficulty_for(DifficultyMix mix, std::uint64_t seed) {
  switch (mix) {
    case DifficultyMix::basic: return Difficulty::basic;
    case DifficultyMix::multi_object: return Difficulty::multi_object;
    case DifficultyMix::mixed: return seed % 2 == 0 ? Difficulty::basic : Difficulty::multi_object;
  }
  return Difficulty::basic;
}

Region cell_region(Cell cell, std::size_t canvas) {
  std::size_t q = canvas / 4;
  switch (cell) {
    case Cell::top: return {0, q, q, 3 * q};
    case Cell::bottom: return {3 * q, 4 * q, q, 3 * q};
    case Cell::left: return {q, 3 * q, 0, q};
    case Cell::right: return {q, 3 * q, 3 * q, 4 * q};
    case Cell::center: return {q, 3 * q, q, 3 * q};
  }
  throw std::logic_error("bad cell");
}

Vocabulary::Vocabulary() : tokens_(std::begin(kTokens), std::end(kTokens)) {}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = std::find(tokens_.begin(), tokens_.end(), token);
  if (it == tokens_.end()) return std::nullopt;
  return static_cast<TokenId>(it - tokens_.begin());
}

TokenId Vocabulary::id(std::string_view token) const {
  auto found = find(token);
  if (!found) throw std::invalid_argument("token '" + std::string(token) + "' not in vocabulary");
  return *found;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (!contains(id)) throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[id];
}

Instruction Instruction::encode(std::span<const std::string> words, const Vocabulary& vocab, std::size_t max_tokens) {
  if (words.size() + 1 > max_tokens)
    throw std::invalid_argument("instruction of " + std::to_string(words.size()) + " words exceeds max_tokens " +
                                std::to_string(max_tokens));
  Instruction ins = null(max_tokens);
  for (std::size_t i = 0; i < words.size(); ++i) {
    TokenId id = vocab.id(words[i]);
    if (id == Vocabulary::kPad || id == Vocabulary::kStart)
      throw std::invalid_argument("reserved token '" + words[i] + "' in instruction text");
    ins.tokens[i + 1] = id;
    ins.relevant[i + 1] = true;
  }
  return ins;
}

Instruction Instruction::null(std::size_t max_tokens) {
  if (max_tokens == 0) throw std::invalid_argument("max_tokens must be positive");
  Instruction ins;
  ins.tokens.assign(max_tokens, Vocabulary::kPad);
  ins.relevant.assign(max_tokens, false);
  ins.tokens[0] = Vocabulary::kStart;
  return ins;
}

std::size_t Instruction::relevant_count() const {
  return static_cast<std::size_t>(std::count(relevant.begin(), relevant.end(), true));
}

std::vector<std::string> Instruction::words(const Vocabulary& vocab) const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (relevant[i]) out.push_back(vocab.token(tokens[i]));
  return out;
}

std::string Instruction::text(const Vocabulary& vocab) const {
  std::string s;
  for (const auto& w : words(vocab)) {
    if (!s.empty()) s += ' ';
    s += w;
  }
  return s;
}

EditWorld::EditWorld(WorldConfig config) : config_(config) {
  if (config_.canvas == 0 || config_.canvas % 4 != 0)
    throw std::invalid_argument("world canvas must be a positive multiple of 4");
  if (config_.max_tokens < 7) throw std::invalid_argument("world max_tokens must be at least 7");
}

EditSample EditWorld::sample(std::uint64_t seed, Difficulty difficulty) const {
  ad::CounterRng rng(ad::derive_key(seed, {kGeneratorTag, static_cast<std::uint64_t>(difficulty)}));
  Placer placer(config_, seed, rng);

  EditSample out;
  auto edit = static_cast<EditKind>(rng.next_index(4));
  auto target = static_cast<Cell>(rng.next_index(5));
  out.target_cell = target;

  Scene scene;
  scene.size = config_.canvas;
  scene.background = kBackgroundShades[rng.next_index(2)];

  std::vector<Cell> free_cells;
  for (int c = 0; c < 5; ++c)
    if (static_cast<Cell>(c) != target) free_cells.push_back(static_cast<Cell>(c));
  for (std::size_t i = free_cells.size(); i > 1; --i) std::swap(free_cells[i - 1], free_cells[rng.next_index(i)]);
  std::size_t distractors = difficulty == Difficulty::basic ? 1 : 2 + rng.next_index(2);

  for (std::size_t i = 0; i < distractors; ++i) {
    auto kind = static_cast<ShapeKind>(rng.next_index(3));
    std::size_t color = rng.next_index(kColorCount);
    scene.shapes.push_back(placer.jittered(kind, color, free_cells[i], scene.shapes));
  }

  Scene result = scene;
  std::vector<std::string> words;
  auto new_kind = static_cast<ShapeKind>(rng.next_index(3));
  std::size_t new_color = rng.next_index(kColorCount);
  if (edit == EditKind::insert) {
    result.shapes.push_back(placer.centered(new_kind, new_color, target));
    words = {"add", std::string(color_name(new_color)), std::string(name_of(new_kind)), std::string(name_of(target))};
  } else {
    auto old_kind = static_cast<ShapeKind>(rng.next_index(3));
    std::size_t old_color = rng.next_index(kColorCount);
    PlacedShape original = placer.centered(old_kind, old_color, target);
    scene.shapes.push_back(original);
    std::string where(name_of(target));
    std::string what(name_of(old_kind));
    if (edit == EditKind::remove) {
      result = scene;
      result.shapes.pop_back();
      words = {"remove", what, where};
    } else if (edit == EditKind::replace) {
      std::size_t tries = 0;
      while (new_kind == old_kind) {
        if (++tries > config_.max_retries)
          throw PlacementError("no distinct replacement shape after retries for " + seed_context(seed));
        new_kind = static_cast<ShapeKind>(rng.next_index(3));
      }
      result = scene;
      result.shapes.back().kind = new_kind;
      result.shapes.back().color = new_color;
      words = {"replace", what, where, "with", std::string(color_name(new_color)), std::string(name_of(new_kind))};
    } else {
      std::size_t tries = 0;
      while (new_color == old_color) {
        if (++tries > config_.max_retries)
          throw PlacementError("no distinct colour after retries for " + seed_context(seed));
        new_color = rng.next_index(kColorCount);
      }
      result = scene;
      result.shapes.back().color = new_color;
      words = {"make", what, where, std::string(color_name(new_color))};
    }
  }

  out.source_scene = scene;
  out.target_scene = result;
  out.triple.seed = seed;
  out.triple.kind = edit;
  out.triple.source = rasterize(scene);
  out.golden = rasterize(result);
  out.triple.mask = Image(config_.canvas, config_.canvas, 1, 0.0);
  Region region = cell_region(target, config_.canvas);
  for (std::size_t r = region.row0; r < region.row1; ++r)
    for (std::size_t c = region.col0; c < region.col1; ++c) out.triple.mask.at(r, c) = 1.0;
  out.triple.instruction = Instruction::encode(words, vocab_, config_.max_tokens);
  return out;
}

void EditWorld::freeze(const std::filesystem::path& dir, std::span<const std::uint64_t> seeds,
                       Difficulty difficulty) const {
  for (std::uint64_t seed : seeds) {
    EditTriple t = generate_triple(seed, difficulty);
    auto sub = dir / ("triple_" + std::to_string(seed));
    std::filesystem::create_directories(sub);
    write_pgm(sub / "source.pgm", t.source);
    write_pgm(sub / "mask.pgm", t.mask);
    std::ofstream f(sub / "instruction.txt");
    if (!f) throw std::runtime_error("cannot write " + (sub / "instruction.txt").string());
    f << t.instruction.text(vocab_) << '\n';
  }
}

bool shape_covers(const PlacedShape& shape, std::size_t row, std::size_t col) {
  if (row < shape.row || col < shape.col || row >= shape.row + shape.size || col >= shape.col + shape.size)
    return false;
  double s = static_cast<double>(shape.size);
  double y = static_cast<double>(row - shape.row) + 0.5;
  double x = static_cast<double>(col - shape.col) + 0.5;
  switch (shape.kind) {
    case ShapeKind::square: return true;
    case ShapeKind::circle: {
      double dy = y - s / 2, dx = x - s / 2;
      return dy * dy + dx * dx <= s * s / 4;
    }
    case ShapeKind::triangle: {
      // Apex up; half-width grows linearly with depth, rounded to whole pixels.
      double half = std::ceil((y / s) * (s / 2));
      return std::abs(x - s / 2) <= half - 0.5 + 1e-9;
    }
  }
  return false;
}

Image rasterize(const Scene& scene) {
  Image img(scene.size, scene.size, 1, scene.background);
  for (const auto& shape : scene.shapes) {
    double shade = kColorShades[shape.color];
    for (std::size_t r = shape.row; r < std::min(shape.row + shape.size, scene.size); ++r)
      for (std::size_t c = shape.col; c < std::min(shape.col + shape.size, scene.size); ++c)
        if (shape_covers(shape, r, c)) img.at(r, c) = shade;
  }
  return img;
}

AttentionMap mask_to_groundtruth_attention(const Image& mask, std::size_t attn_h, std::size_t attn_w) {
  if (attn_h == 0 || attn_w == 0 || mask.height % attn_h != 0 || mask.width % attn_w != 0)
    throw std::invalid_argument("attention resolution " + std::to_string(attn_h) + "x" + std::to_string(attn_w) +
                                " does not divide mask " + mask.shape_string());
  std::size_t ph = mask.height / attn_h, pw = mask.width / attn_w;
  AttentionMap map{attn_h, attn_w, std::vector<double>(attn_h * attn_w, 0.0)};
  double total = 0.0;
  for (std::size_t r = 0; r < mask.height; ++r)
    for (std::size_t c = 0; c < mask.width; ++c) {
      double m = 0.0;
      for (std::size_t ch = 0; ch < mask.channels; ++ch) {
        double v = mask.at(r, c, ch);
        if (v != 0.0 && v != 1.0) throw std::invalid_argument("mask is not binary");
        m = std::max(m, v);
      }
      map.values[(r / ph) * attn_w + c / pw] += m / static_cast<double>(ph * pw);
    }
  for (double v : map.values) total += v;
  if (total == 0.0) throw std::invalid_argument("mask is all zero: no editing region");
  for (double& v : map.values) v /= total;
  return map;
}

}  // namespace pixforge::world
