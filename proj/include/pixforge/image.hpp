#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace pixforge {

// H x W x C grid of reals, row-major with channels innermost.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c = 1, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  std::size_t size() const { return pixels.size(); }
  double& at(std::size_t r, std::size_t c, std::size_t ch = 0) { return pixels[(r * width + c) * channels + ch]; }
  double at(std::size_t r, std::size_t c, std::size_t ch = 0) const { return pixels[(r * width + c) * channels + ch]; }
  bool same_shape(const Image& other) const {
    return height == other.height && width == other.width && channels == other.channels;
  }
  std::string shape_string() const;

  friend bool operator==(const Image&, const Image&) = default;
};

void require_same_shape(const char* op, const Image& a, const Image& b);

// Binary PGM (P5, maxval 255). Single-channel images only; values are
// clamped to [0, 1] and rounded to the nearest level.
void write_pgm(const std::filesystem::path& path, const Image& image);
Image read_pgm(const std::filesystem::path& path);
std::vector<unsigned char> encode_pgm(const Image& image);

}  // namespace pixforge
