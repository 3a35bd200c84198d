#include "pixforge/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

namespace pixforge {

std::string Image::shape_string() const {
  std::ostringstream os;
  os << height << 'x' << width << 'x' << channels;
  return os.str();
}

void require_same_shape(const char* op, const Image& a, const Image& b) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": image shapes differ (" + a.shape_string() + " vs " +
                                b.shape_string() + ")");
}

std::vector<unsigned char> encode_pgm(const Image& image) {
  if (image.channels != 1) throw std::invalid_argument("pgm: only single-channel images are supported");
  std::string header = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  for (double v : image.pixels)
    out.push_back(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  return out;
}

void write_pgm(const std::filesystem::path& path, const Image& image) {
  auto bytes = encode_pgm(image);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  f >> magic >> w >> h >> maxval;
  if (magic != "P5" || maxval != 255 || w == 0 || h == 0)
    throw std::runtime_error(path.string() + ": not a P5 PGM with maxval 255");
  f.get();
  std::vector<unsigned char> raw(w * h);
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (f.gcount() != static_cast<std::streamsize>(raw.size())) throw std::runtime_error(path.string() + ": truncated");
  Image img(h, w, 1);
  for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i] / 255.0;
  return img;
}

}  // namespace pixforge
