#pragma once

// Binary PNM (P5 gray, P6 RGB, maxval 255) and the byte <-> [-1, 1] mapping
//   value = 2 v / 255 - 1,   v = floor((value + 1) * 127.5 + 0.5) clamped to [0, 255].

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "dgan/tensor.hpp"

namespace dgan {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit interleaved raster.
struct Image8 {
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> pixels;  // row-major, channels interleaved

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c = 0) {
    return pixels[(y * width + x) * channels + c];
  }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }
  bool operator==(const Image8&) const = default;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

inline Image8 decode_pnm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto is_space = [](std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; };
  auto skip = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (is_space(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* field) {
    skip();
    if (pos >= bytes.size() || bytes[pos] < '0' || bytes[pos] > '9')
      throw ParseError(std::string("expected ") + field, pos);
    std::size_t v = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 1'000'000) throw ParseError(std::string(field) + " too large", pos);
      ++pos;
    }
    return v;
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw ParseError("not a binary PGM/PPM (expected P5 or P6)", 0);
  pos = 2;
  Image8 img;
  img.channels = bytes[1] == '6' ? 3 : 1;
  img.width = number("width");
  img.height = number("height");
  const std::size_t maxval_at = pos;
  const std::size_t maxval = number("maxval");
  if (img.width == 0 || img.height == 0) throw ParseError("zero image dimension", maxval_at);
  if (maxval != 255) throw ParseError("only maxval 255 is supported", maxval_at);
  if (pos >= bytes.size() || !is_space(bytes[pos]))
    throw ParseError("expected single whitespace before raster", pos);
  ++pos;
  const std::size_t need = img.width * img.height * img.channels;
  if (bytes.size() - pos != need)
    throw ParseError("raster holds " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                         std::to_string(need),
                     pos);
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return img;
}

inline std::vector<std::uint8_t> encode_pnm(const Image8& img) {
  if (img.channels != 1 && img.channels != 3) throw std::invalid_argument("PNM needs 1 or 3 channels");
  const std::string header = std::string(img.channels == 3 ? "P6" : "P5") + "\n" +
                             std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

inline Image8 read_pnm(const std::filesystem::path& path) {
  try {
    return decode_pnm(read_file_bytes(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

inline void write_pnm(const std::filesystem::path& path, const Image8& img) {
  write_file_bytes(path, encode_pnm(img));
}

inline float byte_to_unit(std::uint8_t v) { return static_cast<float>(2.0 * v / 255.0 - 1.0); }

inline std::uint8_t unit_to_byte(float x) {
  const double v = std::floor((static_cast<double>(x) + 1.0) * 127.5 + 0.5);
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

/// [C, H, W] tensor in [-1, 1].
inline Tensor image_to_tensor(const Image8& img) {
  std::vector<float> v(img.pixels.size());
  const std::size_t hw = img.width * img.height;
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t c = 0; c < img.channels; ++c) v[c * hw + i] = byte_to_unit(img.pixels[i * img.channels + c]);
  return Tensor(Shape{img.channels, img.height, img.width}, std::move(v));
}

/// Accepts [C, H, W] or [1, C, H, W].
inline Image8 tensor_to_image(const Tensor& t) {
  const std::size_t off = t.rank() == 4 ? 1 : 0;
  if (t.rank() - off != 3 || (off && t.dim(0) != 1))
    throw DimensionError("tensor_to_image expects [C,H,W], got " + t.shape().str());
  Image8 img{t.dim(off + 2), t.dim(off + 1), t.dim(off), {}};
  const std::size_t hw = img.width * img.height;
  img.pixels.resize(hw * img.channels);
  auto d = t.data();
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t c = 0; c < img.channels; ++c) img.pixels[i * img.channels + c] = unit_to_byte(d[c * hw + i]);
  return img;
}

inline Tensor read_image(const std::filesystem::path& path) {
  auto img = read_pnm(path);
  if (img.channels != 3) throw ParseError(path.string() + ": expected a P6 colour image", 0);
  return image_to_tensor(img);
}

inline void write_image(const std::filesystem::path& path, const Tensor& t) {
  write_pnm(path, tensor_to_image(t));
}

}  // namespace dgan
