#pragma once

#include <string>
#include <vector>

#include "cplae/core/error.hpp"
#include "cplae/data/image.hpp"

namespace cplae::data {

enum class AugmentationKind { hflip, vflip, rot90, rot180, rot270 };

inline std::string to_string(AugmentationKind k) {
  switch (k) {
    case AugmentationKind::hflip: return "hflip";
    case AugmentationKind::vflip: return "vflip";
    case AugmentationKind::rot90: return "rot90";
    case AugmentationKind::rot180: return "rot180";
    case AugmentationKind::rot270: return "rot270";
  }
  return "?";
}

inline AugmentationKind augmentation_from_string(const std::string& s) {
  for (auto k : {AugmentationKind::hflip, AugmentationKind::vflip, AugmentationKind::rot90, AugmentationKind::rot180,
                 AugmentationKind::rot270})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown augmentation '" + s + "' (hflip, vflip, rot90, rot180, rot270)");
}

inline const std::vector<AugmentationKind>& default_augmentations() {
  static const std::vector<AugmentationKind> kinds{AugmentationKind::hflip, AugmentationKind::vflip,
                                                   AugmentationKind::rot270};
  return kinds;
}

namespace detail {

template <typename Map>
Image permute(const Image& in, std::size_t out_h, std::size_t out_w, Map src) {
  Image out(in.channels, out_h, out_w);
  for (std::size_t k = 0; k < in.channels; ++k)
    for (std::size_t r = 0; r < out_h; ++r)
      for (std::size_t c = 0; c < out_w; ++c) {
        auto [sr, sc] = src(r, c);
        out.at(k, r, c) = in.at(k, sr, sc);
      }
  return out;
}

}  // namespace detail

inline Image hflip(const Image& in) {
  return detail::permute(in, in.height, in.width, [&](std::size_t r, std::size_t c) {
    return std::pair{r, in.width - 1 - c};
  });
}

inline Image vflip(const Image& in) {
  return detail::permute(in, in.height, in.width, [&](std::size_t r, std::size_t c) {
    return std::pair{in.height - 1 - r, c};
  });
}

/// Clockwise quarter turn: out(r, c) = in(H − 1 − c, r).
inline Image rot90(const Image& in) {
  if (in.height != in.width)
    throw ContractError("rotation needs a square image, got " + std::to_string(in.height) + "x" + std::to_string(in.width));
  return detail::permute(in, in.height, in.width, [&](std::size_t r, std::size_t c) {
    return std::pair{in.height - 1 - c, r};
  });
}

inline Image rot180(const Image& in) { return rot90(rot90(in)); }
inline Image rot270(const Image& in) { return rot90(rot90(rot90(in))); }

inline Image augment(AugmentationKind kind, const Image& in) {
  switch (kind) {
    case AugmentationKind::hflip: return hflip(in);
    case AugmentationKind::vflip: return vflip(in);
    case AugmentationKind::rot90: return rot90(in);
    case AugmentationKind::rot180: return rot180(in);
    case AugmentationKind::rot270: return rot270(in);
  }
  throw ContractError("unknown augmentation kind");
}

}  // namespace cplae::data
