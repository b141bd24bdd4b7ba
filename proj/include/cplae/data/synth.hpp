#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include "cplae/core/error.hpp"
#include "cplae/core/rng.hpp"
#include "cplae/data/dataset.hpp"

namespace cplae::data {

struct SynthConfig {
  std::size_t class_count = 100;
  std::size_t samples_per_class = 40;
  std::size_t image_size = 32;
  std::size_t channels = 1;
  std::uint64_t seed = 7;
  double val_fraction = 0.16;
  double test_fraction = 0.20;
  // per-sample variation, in units of the image side
  double position_jitter = 0.05;
  double angle_jitter = 0.2;
  double scale_jitter = 0.1;
  double noise = 0.08;
  std::size_t distractors = 1;

  void validate() const {
    if (class_count < 5) throw ConfigError("synth needs at least 5 classes, got " + std::to_string(class_count));
    if (samples_per_class == 0) throw ConfigError("synth samples per class must be positive");
    if (image_size < 4) throw ConfigError("synth image size must be >= 4");
    if (channels != 1 && channels != 3) throw ConfigError("synth channels must be 1 or 3");
    if (val_fraction < 0 || test_fraction < 0 || val_fraction + test_fraction >= 1)
      throw ConfigError("synth split fractions must be >= 0 and leave room for training classes");
  }

  std::size_t test_classes() const { return static_cast<std::size_t>(std::lround(test_fraction * class_count)); }
  std::size_t val_classes() const { return static_cast<std::size_t>(std::lround(val_fraction * class_count)); }
  std::size_t train_classes() const { return class_count - test_classes() - val_classes(); }
};

namespace detail {

struct Part {
  bool bar = true;
  double x = 0.5, y = 0.5;  // centre, unit square
  double angle = 0;         // bars only
  double length = 0.4, width = 0.08, radius = 0.12;
  double intensity = 1;
  double color[3]{1, 1, 1};
};

struct ClassRecipe {
  std::vector<Part> parts;
  double background = 0.0;
};

inline Part random_part(Rng& rng, double intensity_lo) {
  Part p;
  p.bar = rng.uniform01() < 0.6;
  p.x = rng.uniform(0.15, 0.85);
  p.y = rng.uniform(0.15, 0.85);
  p.angle = rng.uniform(0.0, std::numbers::pi);
  p.length = rng.uniform(0.25, 0.6);
  p.width = rng.uniform(0.05, 0.12);
  p.radius = rng.uniform(0.08, 0.18);
  p.intensity = rng.uniform(intensity_lo, 1.0);
  for (double& c : p.color) c = rng.uniform(0.3, 1.0);
  return p;
}

inline ClassRecipe class_recipe(std::uint64_t seed, std::size_t cls) {
  Rng rng(derive_seed(seed, 2 * cls));
  ClassRecipe r;
  const std::size_t parts = 2 + rng.uniform_below(3);
  for (std::size_t i = 0; i < parts; ++i) r.parts.push_back(random_part(rng, 0.5));
  r.background = rng.uniform(0.0, 0.2);
  return r;
}

inline double part_value(const Part& p, double px, double py) {
  if (!p.bar) {
    const double dx = px - p.x, dy = py - p.y;
    return std::exp(-(dx * dx + dy * dy) / (p.radius * p.radius));
  }
  // distance to the segment centred at (x, y)
  const double ux = std::cos(p.angle), uy = std::sin(p.angle);
  const double dx = px - p.x, dy = py - p.y;
  const double along = std::clamp(dx * ux + dy * uy, -p.length / 2, p.length / 2);
  const double ex = dx - along * ux, ey = dy - along * uy;
  return std::exp(-(ex * ex + ey * ey) / (p.width * p.width));
}

inline Image render(const SynthConfig& cfg, const ClassRecipe& recipe, Rng& rng) {
  const double shift_x = cfg.position_jitter * rng.normal(), shift_y = cfg.position_jitter * rng.normal();
  std::vector<Part> parts;
  for (Part p : recipe.parts) {
    p.x += shift_x + 0.5 * cfg.position_jitter * rng.normal();
    p.y += shift_y + 0.5 * cfg.position_jitter * rng.normal();
    p.angle += cfg.angle_jitter * rng.normal();
    p.length *= 1 + cfg.scale_jitter * rng.normal();
    p.radius *= std::max(0.3, 1 + cfg.scale_jitter * rng.normal());
    p.intensity *= 1 + cfg.scale_jitter * rng.normal();
    parts.push_back(p);
  }
  for (std::size_t d = 0; d < cfg.distractors; ++d) {
    Part p = random_part(rng, 0.2);
    p.intensity *= 0.6;
    parts.push_back(p);
  }

  const std::size_t n = cfg.image_size;
  Image img(cfg.channels, n, n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      const double px = (c + 0.5) / n, py = (r + 0.5) / n;
      double v[3] = {recipe.background, recipe.background, recipe.background};
      for (const auto& p : parts) {
        const double a = p.intensity * part_value(p, px, py);
        for (std::size_t k = 0; k < cfg.channels; ++k) v[k] += a * (cfg.channels == 3 ? p.color[k] : 1.0);
      }
      for (std::size_t k = 0; k < cfg.channels; ++k)
        img.at(k, r, c) = from_byte(to_byte(static_cast<float>(v[k] + cfg.noise * rng.normal())));
    }
  return img;
}

}  // namespace detail

/// Procedural dataset of oriented bars and blobs. Each class is a fixed
/// arrangement of 2 to 4 parts; samples jitter position, angle, scale and
/// intensity, add a random distractor and pixel noise, and are quantized to
/// 8 bits so the dataset survives a netpbm round trip unchanged. Class ids
/// [0, train) are training classes, then validation, then test.
inline LabeledDataset synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  LabeledDataset ds;
  const std::size_t train = cfg.train_classes(), val = cfg.val_classes();
  for (std::size_t cls = 0; cls < cfg.class_count; ++cls) {
    char name[32];
    std::snprintf(name, sizeof name, "class%03zu", cls);
    ds.class_names.emplace_back(name);
    const Split split = cls < train ? Split::train : (cls < train + val ? Split::val : Split::test);
    const auto recipe = detail::class_recipe(cfg.seed, cls);
    Rng rng(derive_seed(cfg.seed, 2 * cls + 1));
    for (std::size_t i = 0; i < cfg.samples_per_class; ++i) {
      ds.images.push_back(detail::render(cfg, recipe, rng));
      ds.labels.push_back(cls);
      ds.splits.push_back(split);
    }
  }
  return ds;
}

inline LabeledDataset synth_generate(std::size_t class_count, std::size_t samples_per_class, std::size_t image_size,
                                     std::uint64_t seed) {
  SynthConfig cfg;
  cfg.class_count = class_count;
  cfg.samples_per_class = samples_per_class;
  cfg.image_size = image_size;
  cfg.seed = seed;
  return synth_generate(cfg);
}

}  // namespace cplae::data
