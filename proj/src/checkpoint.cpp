#include "pixforge/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <zlib.h>

namespace pixforge::model {

namespace {

constexpr char kMagic[4] = {'I', 'R', '4', 'P'};
constexpr std::string_view kParamPrefix = "param/";
constexpr std::string_view kModelBlock = "meta/model";

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_f32(std::vector<unsigned char>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  Reader(std::span<const unsigned char> bytes, const std::string& origin) : bytes_(bytes), origin_(origin) {}

  bool done() const { return pos_ == bytes_.size(); }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      throw CheckpointError(origin_ + ": truncated checkpoint at byte " + std::to_string(pos_));
  }

  std::span<const unsigned char> bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::vector<double> model_geometry(const DenoiserConfig& c) {
  return {static_cast<double>(c.image_size), static_cast<double>(c.channels), static_cast<double>(c.patch),
          static_cast<double>(c.width),      static_cast<double>(c.heads),    static_cast<double>(c.blocks),
          static_cast<double>(c.ff_mult),    static_cast<double>(c.vocab_size), static_cast<double>(c.max_tokens),
          static_cast<double>(c.num_steps),  static_cast<double>(c.lora_rank), c.lora_scale};
}

}  // namespace

void Checkpoint::add(std::string name, ad::Shape shape, std::span<const double> values) {
  if (ad::numel_of(shape) != values.size())
    throw CheckpointError("block " + name + ": shape " + ad::to_string(shape) + " does not match " +
                          std::to_string(values.size()) + " values");
  if (find(name)) throw CheckpointError("duplicate block " + name);
  CheckpointBlock b{std::move(name), std::move(shape), {}};
  b.values.reserve(values.size());
  for (double v : values) b.values.push_back(static_cast<float>(v));
  blocks_.push_back(std::move(b));
}

const CheckpointBlock* Checkpoint::find(std::string_view name) const {
  for (const auto& b : blocks_)
    if (b.name == name) return &b;
  return nullptr;
}

const CheckpointBlock& Checkpoint::at(std::string_view name) const {
  const CheckpointBlock* b = find(name);
  if (!b) throw CheckpointError("checkpoint has no block " + std::string(name));
  return *b;
}

std::vector<unsigned char> Checkpoint::serialize() const {
  std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kCheckpointVersion);
  for (const auto& b : blocks_) {
    put_u32(out, static_cast<std::uint32_t>(b.name.size()));
    out.insert(out.end(), b.name.begin(), b.name.end());
    put_u32(out, static_cast<std::uint32_t>(b.shape.size()));
    for (std::size_t e : b.shape) put_u32(out, static_cast<std::uint32_t>(e));
    for (float v : b.values) put_f32(out, v);
  }
  return out;
}

Checkpoint Checkpoint::deserialize(std::span<const unsigned char> bytes, const std::string& origin) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw CheckpointError(origin + ": not a checkpoint (bad magic)");
  Reader r(bytes.subspan(4), origin);
  std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError(origin + ": unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  while (!r.done()) {
    CheckpointBlock b;
    b.name = r.str(r.u32());
    std::uint32_t rank = r.u32();
    for (std::uint32_t i = 0; i < rank; ++i) b.shape.push_back(r.u32());
    std::size_t n = ad::numel_of(b.shape);
    b.values.reserve(n);
    for (std::size_t i = 0; i < n; ++i) b.values.push_back(r.f32());
    if (ckpt.find(b.name)) throw CheckpointError(origin + ": duplicate block " + b.name);
    ckpt.blocks_.push_back(std::move(b));
  }
  return ckpt;
}

std::uint32_t crc32_of(std::span<const float> values) {
  std::vector<unsigned char> bytes;
  bytes.reserve(values.size() * 4);
  for (float v : values) put_f32(bytes, v);
  return static_cast<std::uint32_t>(::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

std::string Checkpoint::manifest() const {
  std::ostringstream os;
  os << "IR4P version " << kCheckpointVersion << '\n';
  for (const auto& b : blocks_)
    os << b.name << '\t' << ad::to_string(b.shape) << '\t' << std::hex << std::setw(8) << std::setfill('0')
       << crc32_of(b.values) << std::dec << '\n';
  return os.str();
}

std::filesystem::path manifest_path(const std::filesystem::path& checkpoint) {
  return checkpoint.string() + ".manifest";
}

void Checkpoint::save(const std::filesystem::path& path) const {
  auto bytes = serialize();
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError("failed writing " + path.string());
  }
  std::ofstream m(manifest_path(path), std::ios::trunc);
  if (!m) throw CheckpointError("cannot write manifest for " + path.string());
  m << manifest();
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(bytes, path.string());
}

void store_params(Checkpoint& ckpt, const ParamSet& params) {
  for (const auto& name : params.names()) {
    const auto& t = params.get(name);
    ckpt.add(std::string(kParamPrefix) + name, t.shape(), t.data());
  }
}

void store_model_config(Checkpoint& ckpt, const DenoiserConfig& config) {
  auto g = model_geometry(config);
  ckpt.add(std::string(kModelBlock), {g.size()}, g);
}

void check_model_config(const Checkpoint& ckpt, const DenoiserConfig& config) {
  const auto& block = ckpt.at(kModelBlock);
  auto want = model_geometry(config);
  bool ok = block.values.size() == want.size();
  for (std::size_t i = 0; ok && i < want.size(); ++i) ok = block.values[i] == static_cast<float>(want[i]);
  if (!ok) throw CheckpointError("checkpoint model geometry does not match the configured model");
}

ParamSet restore_params(const Checkpoint& ckpt) {
  ParamSet params;
  for (const auto& b : ckpt.blocks()) {
    if (!b.name.starts_with(kParamPrefix)) continue;
    std::vector<double> v(b.values.begin(), b.values.end());
    params.add(b.name.substr(kParamPrefix.size()), ad::Tensor::from(b.shape, std::move(v)));
  }
  if (params.size() == 0) throw CheckpointError("checkpoint holds no parameters");
  return params;
}

}  // namespace pixforge::model
