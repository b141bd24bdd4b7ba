#pragma once

#include <set>
#include <string>
#include <vector>

#include "cplae/core/error.hpp"
#include "cplae/core/rng.hpp"
#include "cplae/data/augment.hpp"
#include "cplae/data/dataset.hpp"

namespace cplae::data {

struct EpisodeConfig {
  std::size_t n = 5, k = 5, q = 15;
  std::vector<AugmentationKind> augmentations = default_augmentations();

  void validate() const {
    if (n < 2) throw ConfigError("episode n (ways) must be >= 2, got " + std::to_string(n));
    if (k < 1) throw ConfigError("episode k (shots) must be >= 1");
    if (q < 1) throw ConfigError("episode q (queries) must be >= 1");
    if (augmentations.size() < 2 || augmentations.size() > 4)
      throw ConfigError("augmentation list must hold 2 to 4 kinds, got " + std::to_string(augmentations.size()));
    std::set<AugmentationKind> seen(augmentations.begin(), augmentations.end());
    if (seen.size() != augmentations.size()) throw ConfigError("augmentation list has duplicates");
  }
};

/// Sample ids refer to the dataset the episode was drawn from. Support and
/// query are class-major: entry c·k + s is shot s of episode class c, with
/// episode-local label c.
struct Episode {
  std::size_t n = 0, k = 0, q = 0;
  std::vector<std::size_t> classes;  // dataset label per episode class
  std::vector<std::size_t> support_ids, query_ids;
  std::vector<std::size_t> support_labels, query_labels;

  bool operator==(const Episode&) const = default;
};

namespace detail {

// First `count` entries of a partial Fisher–Yates shuffle of `pool`.
inline std::vector<std::size_t> draw_without_replacement(std::vector<std::size_t> pool, std::size_t count, Rng& rng) {
  for (std::size_t j = 0; j < count; ++j) {
    const std::size_t pick = j + static_cast<std::size_t>(rng.uniform_below(pool.size() - j));
    std::swap(pool[j], pool[pick]);
  }
  pool.resize(count);
  return pool;
}

}  // namespace detail

/// n distinct classes uniformly, then k + q distinct samples per class, the
/// first k going to the support set.
inline Episode sample_episode(const LabeledDataset& ds, const EpisodeConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto index = ds.class_index();
  std::vector<std::size_t> labels;
  for (const auto& [label, ids] : index) labels.push_back(label);
  if (labels.size() < cfg.n)
    throw SamplingError("episode needs " + std::to_string(cfg.n) + " classes but the split has " +
                        std::to_string(labels.size()));
  Episode ep{cfg.n, cfg.k, cfg.q, detail::draw_without_replacement(labels, cfg.n, rng), {}, {}, {}, {}};
  for (std::size_t c = 0; c < cfg.n; ++c) {
    const auto& pool = index.at(ep.classes[c]);
    if (pool.size() < cfg.k + cfg.q) {
      const std::string name =
          ep.classes[c] < ds.class_names.size() ? ds.class_names[ep.classes[c]] : std::to_string(ep.classes[c]);
      throw SamplingError("class '" + name + "' has " + std::to_string(pool.size()) + " samples, episode needs k+q = " +
                          std::to_string(cfg.k + cfg.q));
    }
    const auto picks = detail::draw_without_replacement(pool, cfg.k + cfg.q, rng);
    for (std::size_t i = 0; i < cfg.k; ++i) {
      ep.support_ids.push_back(picks[i]);
      ep.support_labels.push_back(c);
    }
    for (std::size_t i = cfg.k; i < cfg.k + cfg.q; ++i) {
      ep.query_ids.push_back(picks[i]);
      ep.query_labels.push_back(c);
    }
  }
  return ep;
}

}  // namespace cplae::data
