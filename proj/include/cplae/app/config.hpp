#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "cplae/core/error.hpp"
#include "cplae/data/augment.hpp"
#include "cplae/data/episode.hpp"
#include "cplae/data/synth.hpp"
#include "cplae/method/episode_loss.hpp"
#include "cplae/nn/optimizer.hpp"

namespace cplae::app {

using nlohmann::json;

struct DataSection {
  std::string manifest;  // empty: generate the synthetic dataset
  std::size_t synth_classes = 100;
  std::size_t synth_per_class = 40;
  std::size_t synth_size = 32;
  std::size_t synth_channels = 1;
  std::uint64_t synth_seed = 7;
  double synth_noise = 0.08;
  double synth_position_jitter = 0.05;
  double synth_angle_jitter = 0.2;
  double synth_scale_jitter = 0.1;
  std::size_t synth_distractors = 1;
  std::size_t n = 5, k = 5, q = 15;  // training episodes
  std::vector<std::string> augmentations{"hflip", "vflip", "rot270"};
  bool operator==(const DataSection&) const = default;
};

struct BackboneSection {
  std::size_t block_count = 4;
  std::vector<std::size_t> channels{64, 64, 64, 64};
  bool use_batchnorm = true;
  double bn_momentum = 0.1;
  bool operator==(const BackboneSection&) const = default;
};

struct CplaeSection {
  double temperature = 1.0;
  std::size_t negatives = 6;
  double lambda = 0.1;
  std::string anchor_mode = "prototype";
  bool use_projection = true;
  bool project_anchor = false;
  std::size_t projection_hidden = 0;
  std::size_t projection_out = 0;
  bool shuffle_queries = true;
  bool random_shuffle = false;
  bool use_ae = true;
  bool attention_residual = true;
  bool compute_cpl = true;
  bool fsl_squared_distance = true;
  bool fsl_divide_by_q = false;
  bool operator==(const CplaeSection&) const = default;
};

struct OptimizerSection {
  std::string kind = "adam";
  double lr = 1e-4;
  double weight_decay = 0.0;
  double momentum = 0.9;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::size_t halving_period = 20;
  bool operator==(const OptimizerSection&) const = default;
};

struct TrainSection {
  std::string preset = "cplae";
  std::size_t epochs = 100;
  std::size_t episodes_per_epoch = 100;
  std::uint64_t seed = 0;
  std::size_t val_episodes = 200;
  bool pretrain = false;
  std::size_t pretrain_epochs = 30;
  std::size_t pretrain_batch = 64;
  double pretrain_lr = 1e-3;
  bool operator==(const TrainSection&) const = default;
};

struct EvalSection {
  std::size_t n = 5, k = 5, q = 15;
  std::size_t episodes = 500;
  std::uint64_t seed = 2024;
  std::size_t threads = 1;
  bool db_index = true;
  std::vector<std::uint64_t> ablation_seeds{0, 1, 2, 3, 4};
  bool operator==(const EvalSection&) const = default;
};

struct RunConfig {
  DataSection data;
  BackboneSection backbone;
  CplaeSection cplae;
  OptimizerSection optimizer;
  TrainSection train;
  EvalSection eval;
  bool operator==(const RunConfig&) const = default;
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"protonet", "protonet_ae", "cplae_noshuffle", "cplae"};
  return names;
}

/// Resolves an ablation preset into explicit flags:
///   protonet         no AE, no CPL term, λ = 0
///   protonet_ae      AE, CPL evaluated but λ = 0
///   cplae_noshuffle  AE, CPL with ordered query AEs
///   cplae            AE, CPL with shuffled query AEs
inline RunConfig apply_preset(RunConfig cfg) {
  auto& c = cfg.cplae;
  const auto& p = cfg.train.preset;
  if (p == "protonet") {
    c.use_ae = false;
    c.compute_cpl = false;
    c.lambda = 0.0;
  } else if (p == "protonet_ae") {
    c.use_ae = true;
    c.compute_cpl = true;
    c.lambda = 0.0;
  } else if (p == "cplae_noshuffle") {
    c.use_ae = true;
    c.compute_cpl = true;
    c.shuffle_queries = false;
  } else if (p == "cplae") {
    c.use_ae = true;
    c.compute_cpl = true;
    c.shuffle_queries = true;
  } else if (p != "custom") {
    throw ConfigError("train.preset must be one of protonet, protonet_ae, cplae_noshuffle, cplae, custom; got \"" + p + "\"");
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Derived objects
// ---------------------------------------------------------------------------

inline std::vector<data::AugmentationKind> augmentations(const RunConfig& cfg) {
  std::vector<data::AugmentationKind> out;
  for (const auto& s : cfg.data.augmentations) out.push_back(data::augmentation_from_string(s));
  return out;
}

inline data::EpisodeConfig train_episode(const RunConfig& cfg) {
  return {cfg.data.n, cfg.data.k, cfg.data.q, augmentations(cfg)};
}

inline data::EpisodeConfig eval_episode(const RunConfig& cfg) {
  return {cfg.eval.n, cfg.eval.k, cfg.eval.q, augmentations(cfg)};
}

inline data::SynthConfig synth_config(const RunConfig& cfg) {
  data::SynthConfig sc;
  sc.class_count = cfg.data.synth_classes;
  sc.samples_per_class = cfg.data.synth_per_class;
  sc.image_size = cfg.data.synth_size;
  sc.channels = cfg.data.synth_channels;
  sc.seed = cfg.data.synth_seed;
  sc.noise = cfg.data.synth_noise;
  sc.position_jitter = cfg.data.synth_position_jitter;
  sc.angle_jitter = cfg.data.synth_angle_jitter;
  sc.scale_jitter = cfg.data.synth_scale_jitter;
  sc.distractors = cfg.data.synth_distractors;
  return sc;
}

/// Architecture for images of the given shape.
inline method::ModelConfig model_config(const RunConfig& cfg, const data::Image& sample) {
  method::ModelConfig mc;
  mc.backbone.block_count = cfg.backbone.block_count;
  mc.backbone.channels = cfg.backbone.channels;
  mc.backbone.input_channels = sample.channels;
  mc.backbone.input_height = sample.height;
  mc.backbone.input_width = sample.width;
  mc.backbone.use_batchnorm = cfg.backbone.use_batchnorm;
  mc.backbone.bn_momentum = cfg.backbone.bn_momentum;
  mc.use_ae = cfg.cplae.use_ae;
  mc.augmentation_count = cfg.data.augmentations.size();
  mc.attention_residual = cfg.cplae.attention_residual;
  mc.projection_hidden = cfg.cplae.projection_hidden;
  mc.projection_out = cfg.cplae.projection_out;
  mc.project_anchor = cfg.cplae.project_anchor;
  return mc;
}

inline method::LossOptions loss_options(const RunConfig& cfg) {
  method::LossOptions lo;
  lo.cpl.temperature = cfg.cplae.temperature;
  lo.cpl.negatives = cfg.cplae.negatives;
  lo.cpl.lambda = cfg.cplae.lambda;
  lo.cpl.anchor_mode = method::anchor_mode_from_string(cfg.cplae.anchor_mode);
  lo.cpl.use_projection = cfg.cplae.use_projection;
  lo.cpl.shuffle_queries = cfg.cplae.shuffle_queries;
  lo.cpl.random_shuffle = cfg.cplae.random_shuffle;
  lo.fsl.squared_distance = cfg.cplae.fsl_squared_distance;
  lo.fsl.divide_by_q_only = cfg.cplae.fsl_divide_by_q;
  lo.compute_cpl = cfg.cplae.compute_cpl;
  return lo;
}

inline nn::OptimizerConfig optimizer_config(const RunConfig& cfg) {
  nn::OptimizerConfig oc;
  oc.kind = nn::optimizer_kind_from_string(cfg.optimizer.kind);
  oc.lr = cfg.optimizer.lr;
  oc.weight_decay = cfg.optimizer.weight_decay;
  oc.momentum = cfg.optimizer.momentum;
  oc.beta1 = cfg.optimizer.beta1;
  oc.beta2 = cfg.optimizer.beta2;
  oc.eps = cfg.optimizer.eps;
  return oc;
}

/// Checks everything that can be checked without data.
inline void validate(const RunConfig& raw) {
  const RunConfig cfg = apply_preset(raw);
  train_episode(cfg).validate();
  eval_episode(cfg).validate();
  if (cfg.data.manifest.empty()) synth_config(cfg).validate();
  loss_options(cfg).cpl.validate(cfg.cplae.compute_cpl ? cfg.data.q : 0);
  optimizer_config(cfg);
  if (cfg.optimizer.lr < 0) throw ConfigError("optimizer.lr must be >= 0");
  if (cfg.train.episodes_per_epoch == 0) throw ConfigError("train.episodes_per_epoch must be >= 1");
  if (cfg.train.pretrain_batch == 0) throw ConfigError("train.pretrain_batch must be >= 1");
  if (cfg.eval.episodes == 0) throw ConfigError("eval.episodes must be >= 1");
  if (cfg.eval.threads == 0) throw ConfigError("eval.threads must be >= 1");
  data::Image probe(cfg.data.manifest.empty() ? cfg.data.synth_channels : 1, 1u << cfg.backbone.block_count,
                    1u << cfg.backbone.block_count);
  model_config(cfg, probe).validate();
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace detail {

// Reads known keys of one section and rejects the rest.
class SectionReader {
 public:
  SectionReader(const json& root, std::string name) : name_(std::move(name)) {
    if (!root.contains(name_)) return;
    obj_ = &root.at(name_);
    if (!obj_->is_object()) throw ConfigError("config section \"" + name_ + "\" must be an object");
  }

  template <typename V>
  void read(const char* key, V& target) {
    known_.insert(key);
    if (!obj_ || !obj_->contains(key)) return;
    const json& v = obj_->at(key);
    const std::string field = name_ + "." + key;
    try {
      if constexpr (std::is_same_v<V, bool>) {
        if (!v.is_boolean()) throw ConfigError(field + " must be a boolean");
        target = v.get<bool>();
      } else if constexpr (std::is_same_v<V, std::string>) {
        if (!v.is_string()) throw ConfigError(field + " must be a string");
        target = v.get<std::string>();
      } else if constexpr (std::is_floating_point_v<V>) {
        if (!v.is_number()) throw ConfigError(field + " must be a number");
        target = v.get<V>();
      } else if constexpr (std::is_integral_v<V>) {
        if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
          throw ConfigError(field + " must be a non-negative integer");
        target = v.get<V>();
      } else {
        if (!v.is_array()) throw ConfigError(field + " must be an array");
        V out;
        for (const auto& e : v) {
          using E = typename V::value_type;
          if constexpr (std::is_same_v<E, std::string>) {
            if (!e.is_string()) throw ConfigError(field + " entries must be strings");
          } else {
            if (!e.is_number_unsigned()) throw ConfigError(field + " entries must be non-negative integers");
          }
          out.push_back(e.get<E>());
        }
        target = std::move(out);
      }
    } catch (const json::exception& e) {
      throw ConfigError(field + ": " + e.what());
    }
  }

  void finish() const {
    if (!obj_) return;
    for (const auto& [key, value] : obj_->items())
      if (!known_.count(key)) throw ConfigError("unknown config key \"" + name_ + "." + key + "\"");
  }

 private:
  std::string name_;
  const json* obj_ = nullptr;
  std::set<std::string> known_;
};

}  // namespace detail

/// Applies `visit(section, key, field)` to every config field, in echo order.
template <typename Cfg, typename Visit>
void for_each_field(Cfg& c, Visit&& visit) {
  visit("data", "manifest", c.data.manifest);
  visit("data", "synth_classes", c.data.synth_classes);
  visit("data", "synth_per_class", c.data.synth_per_class);
  visit("data", "synth_size", c.data.synth_size);
  visit("data", "synth_channels", c.data.synth_channels);
  visit("data", "synth_seed", c.data.synth_seed);
  visit("data", "synth_noise", c.data.synth_noise);
  visit("data", "synth_position_jitter", c.data.synth_position_jitter);
  visit("data", "synth_angle_jitter", c.data.synth_angle_jitter);
  visit("data", "synth_scale_jitter", c.data.synth_scale_jitter);
  visit("data", "synth_distractors", c.data.synth_distractors);
  visit("data", "n", c.data.n);
  visit("data", "k", c.data.k);
  visit("data", "q", c.data.q);
  visit("data", "augmentations", c.data.augmentations);

  visit("backbone", "block_count", c.backbone.block_count);
  visit("backbone", "channels", c.backbone.channels);
  visit("backbone", "use_batchnorm", c.backbone.use_batchnorm);
  visit("backbone", "bn_momentum", c.backbone.bn_momentum);

  visit("cplae", "temperature", c.cplae.temperature);
  visit("cplae", "negatives", c.cplae.negatives);
  visit("cplae", "lambda", c.cplae.lambda);
  visit("cplae", "anchor_mode", c.cplae.anchor_mode);
  visit("cplae", "use_projection", c.cplae.use_projection);
  visit("cplae", "project_anchor", c.cplae.project_anchor);
  visit("cplae", "projection_hidden", c.cplae.projection_hidden);
  visit("cplae", "projection_out", c.cplae.projection_out);
  visit("cplae", "shuffle_queries", c.cplae.shuffle_queries);
  visit("cplae", "random_shuffle", c.cplae.random_shuffle);
  visit("cplae", "use_ae", c.cplae.use_ae);
  visit("cplae", "attention_residual", c.cplae.attention_residual);
  visit("cplae", "compute_cpl", c.cplae.compute_cpl);
  visit("cplae", "fsl_squared_distance", c.cplae.fsl_squared_distance);
  visit("cplae", "fsl_divide_by_q", c.cplae.fsl_divide_by_q);

  visit("optimizer", "kind", c.optimizer.kind);
  visit("optimizer", "lr", c.optimizer.lr);
  visit("optimizer", "weight_decay", c.optimizer.weight_decay);
  visit("optimizer", "momentum", c.optimizer.momentum);
  visit("optimizer", "beta1", c.optimizer.beta1);
  visit("optimizer", "beta2", c.optimizer.beta2);
  visit("optimizer", "eps", c.optimizer.eps);
  visit("optimizer", "halving_period", c.optimizer.halving_period);

  visit("train", "preset", c.train.preset);
  visit("train", "epochs", c.train.epochs);
  visit("train", "episodes_per_epoch", c.train.episodes_per_epoch);
  visit("train", "seed", c.train.seed);
  visit("train", "val_episodes", c.train.val_episodes);
  visit("train", "pretrain", c.train.pretrain);
  visit("train", "pretrain_epochs", c.train.pretrain_epochs);
  visit("train", "pretrain_batch", c.train.pretrain_batch);
  visit("train", "pretrain_lr", c.train.pretrain_lr);

  visit("eval", "n", c.eval.n);
  visit("eval", "k", c.eval.k);
  visit("eval", "q", c.eval.q);
  visit("eval", "episodes", c.eval.episodes);
  visit("eval", "seed", c.eval.seed);
  visit("eval", "threads", c.eval.threads);
  visit("eval", "db_index", c.eval.db_index);
  visit("eval", "ablation_seeds", c.eval.ablation_seeds);
}

inline const std::vector<std::string>& section_names() {
  static const std::vector<std::string> names{"data", "backbone", "cplae", "optimizer", "train", "eval"};
  return names;
}

/// Strict parse: unknown sections or keys and mistyped values are ConfigErrors
/// naming the field. Missing fields keep their defaults.
inline RunConfig config_from_json(const json& root) {
  if (!root.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : root.items()) {
    bool known = false;
    for (const auto& s : section_names()) known |= s == key;
    if (!known) throw ConfigError("unknown config section \"" + key + "\"");
  }
  RunConfig cfg;
  std::vector<detail::SectionReader> readers;
  for (const auto& s : section_names()) readers.emplace_back(root, s);
  auto reader = [&](const std::string& section) -> detail::SectionReader& {
    for (std::size_t i = 0; i < section_names().size(); ++i)
      if (section_names()[i] == section) return readers[i];
    throw ConfigError("internal: unknown section " + section);
  };
  for_each_field(cfg, [&](const char* section, const char* key, auto& field) { reader(section).read(key, field); });
  for (const auto& r : readers) r.finish();
  return cfg;
}

inline json config_to_json(const RunConfig& cfg) {
  json root = json::object();
  for (const auto& s : section_names()) root[s] = json::object();
  RunConfig copy = cfg;
  for_each_field(copy, [&](const char* section, const char* key, auto& field) { root[section][key] = field; });
  return root;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON (" + e.what() + ")");
  }
  try {
    return config_from_json(root);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace cplae::app
