#pragma once

// Synthetic editing world: small grayscale canvases with a handful of shapes,
// an edit instruction, and the mask of the region the instruction targets.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pixforge/image.hpp"

namespace pixforge::world {

enum class ShapeKind { square, circle, triangle };
enum class Cell { left, right, top, bottom, center };
enum class EditKind { insert, remove, replace, transform };
enum class Difficulty { basic, multi_object };

inline constexpr std::size_t kColorCount = 3;
inline constexpr double kColorShades[kColorCount] = {0.35, 0.6, 0.9};
inline constexpr double kBackgroundShades[2] = {0.0, 0.12};

std::string_view name_of(ShapeKind k);
std::string_view name_of(Cell c);
std::string_view name_of(EditKind k);
std::string_view name_of(Difficulty d);
std::string_view color_name(std::size_t color);
Difficulty parse_difficulty(std::string_view name);

// Which difficulty a seed is generated at; `mixed` alternates on seed parity.
enum class DifficultyMix { basic, multi_object, mixed };
DifficultyMix parse_difficulty_mix(std::string_view name);
std::string_view name_of(DifficultyMix m);
Difficulty difficulty_for(DifficultyMix mix, std::uint64_t seed);

struct PlacedShape {
  ShapeKind kind = ShapeKind::square;
  std::size_t color = 0;
  Cell cell = Cell::center;
  std::size_t row = 0;  // top-left corner of the bounding box
  std::size_t col = 0;
  std::size_t size = 4;
};

struct Scene {
  std::size_t size = 16;
  double background = 0.0;
  std::vector<PlacedShape> shapes;
};

// Pixel rectangle [row0, row1) x [col0, col1).
struct Region {
  std::size_t row0, row1, col0, col1;
};

Region cell_region(Cell cell, std::size_t canvas);

using TokenId = std::size_t;

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kStart = 1;

  Vocabulary();

  std::size_t size() const { return tokens_.size(); }
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  bool contains(TokenId id) const { return id < tokens_.size(); }
  std::optional<TokenId> find(std::string_view token) const;

 private:
  std::vector<std::string> tokens_;
};

// Fixed-length token sequence. Position 0 holds the start token, which takes
// part in attention but is not attention-relevant; trailing slots are padding.
struct Instruction {
  std::vector<TokenId> tokens;
  std::vector<bool> relevant;

  static Instruction encode(std::span<const std::string> words, const Vocabulary& vocab, std::size_t max_tokens);
  // Unconditional input: start token followed by padding.
  static Instruction null(std::size_t max_tokens);

  std::size_t relevant_count() const;
  std::vector<std::string> words(const Vocabulary& vocab) const;
  std::string text(const Vocabulary& vocab) const;

  friend bool operator==(const Instruction&, const Instruction&) = default;
};

// Per-cell nonnegative weights on an attention-resolution grid.
struct AttentionMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;
};

struct EditTriple {
  std::uint64_t seed = 0;
  EditKind kind = EditKind::insert;
  Image source;
  Image mask;
  Instruction instruction;
};

// Everything the generator knows about one edit. The golden render is only
// used for pretraining and evaluation, never by the reward.
struct EditSample {
  EditTriple triple;
  Image golden;
  Scene source_scene;
  Scene target_scene;
  Cell target_cell = Cell::center;
};

struct WorldConfig {
  std::size_t canvas = 16;
  std::size_t shape_size = 4;
  std::size_t max_tokens = 8;
  std::size_t max_retries = 64;
};

class PlacementError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EditWorld {
 public:
  explicit EditWorld(WorldConfig config = {});

  const WorldConfig& config() const { return config_; }
  const Vocabulary& vocabulary() const { return vocab_; }

  EditSample sample(std::uint64_t seed, Difficulty difficulty) const;
  EditTriple generate_triple(std::uint64_t seed, Difficulty difficulty) const {
    return sample(seed, difficulty).triple;
  }

  // Writes <dir>/triple_<seed>/{source.pgm,mask.pgm,instruction.txt}.
  void freeze(const std::filesystem::path& dir, std::span<const std::uint64_t> seeds, Difficulty difficulty) const;

 private:
  WorldConfig config_;
  Vocabulary vocab_;
};

Image rasterize(const Scene& scene);
bool shape_covers(const PlacedShape& shape, std::size_t row, std::size_t col);

// Average-pools a binary mask to attn_h x attn_w and L1-normalizes it.
AttentionMap mask_to_groundtruth_attention(const Image& mask, std::size_t attn_h, std::size_t attn_w);

}  // namespace pixforge::world
