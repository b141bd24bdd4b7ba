#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cplae/core/error.hpp"

namespace cplae::data {

/// Channel-major (C×H×W) image with values in [0, 1].
struct Image {
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
      : channels(c), height(h), width(w), pixels(c * h * w, fill) {}

  float& at(std::size_t c, std::size_t r, std::size_t col) { return pixels[(c * height + r) * width + col]; }
  float at(std::size_t c, std::size_t r, std::size_t col) const { return pixels[(c * height + r) * width + col]; }

  bool same_shape(const Image& o) const { return channels == o.channels && height == o.height && width == o.width; }
  std::string shape_str() const {
    return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
  }
  bool operator==(const Image&) const = default;
};

inline std::uint8_t to_byte(float v) {
  const float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

inline float from_byte(std::uint8_t b, unsigned maxval = 255) {
  return static_cast<float>(b) / static_cast<float>(maxval);
}

namespace detail {

// Next header token, skipping whitespace and '#' comments. The delimiter
// after the token is left in the stream.
inline std::string pnm_token(std::istream& in, const std::string& where) {
  int ch = in.peek();
  while (ch != EOF && (ch == '#' || std::isspace(ch))) {
    if (ch == '#')
      while (ch != EOF && ch != '\n') ch = (in.get(), in.peek());
    else
      ch = (in.get(), in.peek());
  }
  std::string tok;
  while (ch != EOF && !std::isspace(ch) && ch != '#') {
    tok.push_back(static_cast<char>(in.get()));
    ch = in.peek();
  }
  if (tok.empty()) throw IngestionError(where + ": truncated netpbm header");
  return tok;
}

inline unsigned pnm_number(std::istream& in, const std::string& where, const char* field) {
  const std::string tok = pnm_token(in, where);
  for (char c : tok)
    if (!std::isdigit(static_cast<unsigned char>(c)))
      throw IngestionError(where + ": malformed netpbm header, bad " + std::string(field) + " '" + tok + "'");
  if (tok.size() > 9) throw IngestionError(where + ": netpbm " + std::string(field) + " too large");
  return static_cast<unsigned>(std::stoul(tok));
}

}  // namespace detail

/// Reads binary PGM (P5, 1 channel) or PPM (P6, 3 channels) with maxval ≤ 255.
inline Image read_netpbm(const std::filesystem::path& path) {
  const std::string where = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError(where + ": cannot open image file");
  const std::string magic = detail::pnm_token(in, where);
  std::size_t channels;
  if (magic == "P5")
    channels = 1;
  else if (magic == "P6")
    channels = 3;
  else
    throw IngestionError(where + ": malformed netpbm header, magic '" + magic + "' is not P5 or P6");
  const unsigned width = detail::pnm_number(in, where, "width");
  const unsigned height = detail::pnm_number(in, where, "height");
  const unsigned maxval = detail::pnm_number(in, where, "maxval");
  if (!std::isspace(in.get())) throw IngestionError(where + ": malformed netpbm header after maxval");
  if (width == 0 || height == 0) throw IngestionError(where + ": netpbm image has zero size");
  if (maxval == 0 || maxval > 255) throw IngestionError(where + ": unsupported netpbm maxval " + std::to_string(maxval));

  std::vector<unsigned char> raw(channels * width * height);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw IngestionError(where + ": truncated netpbm pixel data");

  Image img(channels, height, width);
  // file order is interleaved HWC
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c)
      for (std::size_t k = 0; k < channels; ++k) {
        const unsigned char b = raw[(r * width + c) * channels + k];
        if (b > maxval) throw IngestionError(where + ": pixel value exceeds maxval");
        img.at(k, r, c) = from_byte(b, maxval);
      }
  return img;
}

/// Writes P5 for 1-channel and P6 for 3-channel images, maxval 255.
inline void write_netpbm(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw ContractError("netpbm output needs 1 or 3 channels, got " + std::to_string(img.channels));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestionError(path.string() + ": cannot open for writing");
  out << (img.channels == 1 ? "P5" : "P6") << "\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> raw(img.pixels.size());
  for (std::size_t r = 0; r < img.height; ++r)
    for (std::size_t c = 0; c < img.width; ++c)
      for (std::size_t k = 0; k < img.channels; ++k) raw[(r * img.width + c) * img.channels + k] = to_byte(img.at(k, r, c));
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IngestionError(path.string() + ": write failed");
}

}  // namespace cplae::data
