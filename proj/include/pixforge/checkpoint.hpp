#pragma once

// Binary checkpoint: "IR4P", u32 format version, then named blocks until EOF.
// Each block is u32 name length, name bytes, u32 rank, u32 extents, and the
// payload as little-endian f32. A text manifest next to the file lists every
// block with its shape and the CRC-32 of its payload bytes.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pixforge/autodiff.hpp"
#include "pixforge/denoiser.hpp"

namespace pixforge::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointBlock {
  std::string name;
  ad::Shape shape;
  std::vector<float> values;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Checkpoint {
 public:
  void add(std::string name, ad::Shape shape, std::span<const double> values);
  const CheckpointBlock* find(std::string_view name) const;
  const CheckpointBlock& at(std::string_view name) const;
  const std::vector<CheckpointBlock>& blocks() const { return blocks_; }

  std::vector<unsigned char> serialize() const;
  static Checkpoint deserialize(std::span<const unsigned char> bytes, const std::string& origin = "<memory>");
  std::string manifest() const;

  // Writes the checkpoint and "<path>.manifest".
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::vector<CheckpointBlock> blocks_;
};

std::filesystem::path manifest_path(const std::filesystem::path& checkpoint);
std::uint32_t crc32_of(std::span<const float> values);

// Parameters are stored as "param/<name>" blocks, model geometry as "meta/model".
void store_params(Checkpoint& ckpt, const ParamSet& params);
void store_model_config(Checkpoint& ckpt, const DenoiserConfig& config);
// Geometry recorded in the checkpoint must match `config`.
void check_model_config(const Checkpoint& ckpt, const DenoiserConfig& config);
ParamSet restore_params(const Checkpoint& ckpt);

}  // namespace pixforge::model
