#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cplae/core/error.hpp"
#include "cplae/core/ops.hpp"
#include "cplae/data/augment.hpp"
#include "cplae/data/dataset.hpp"
#include "cplae/data/episode.hpp"
#include "cplae/nn/attention.hpp"
#include "cplae/nn/backbone.hpp"
#include "cplae/nn/projection.hpp"

namespace cplae::method {

struct ModelConfig {
  nn::BackboneConfig backbone;
  bool use_ae = true;                  // false: plain f(x), the ProtoNet baseline
  std::size_t augmentation_count = 3;  // AE tokens = 1 + augmentation_count
  bool attention_residual = true;
  std::size_t projection_hidden = 0;  // 0 means the AE dimension
  std::size_t projection_out = 0;     // 0 means the AE dimension
  bool project_anchor = false;

  std::size_t token_count() const { return use_ae ? 1 + augmentation_count : 1; }
  std::size_t ae_dim() const { return token_count() * backbone.embedding_dim(); }
  std::size_t hidden_dim() const { return projection_hidden ? projection_hidden : ae_dim(); }
  std::size_t out_dim() const { return projection_out ? projection_out : ae_dim(); }

  void validate() const {
    backbone.validate();
    if (use_ae && (augmentation_count < 2 || augmentation_count > 4))
      throw ConfigError("augmentation count must be 2 to 4, got " + std::to_string(augmentation_count));
    if (!project_anchor && out_dim() != ae_dim())
      throw ConfigError("projection output dim " + std::to_string(out_dim()) +
                        " must equal the augmented embedding dim " + std::to_string(ae_dim()) +
                        " because prototype anchors are compared unprojected");
  }
};

/// Backbone f, integrator A and projection head h.
template <typename T>
class Model {
 public:
  Model() = default;

  Model(ModelConfig config, Rng& rng) : config_(std::move(config)) {
    config_.validate();
    backbone_ = nn::Backbone<T>(config_.backbone, rng);
    if (config_.use_ae)
      attention_ = nn::AttentionIntegrator<T>(config_.backbone.embedding_dim(), config_.token_count(),
                                              config_.attention_residual, rng);
    projection_ = nn::ProjectionHead<T>(config_.ae_dim(), config_.hidden_dim(), config_.out_dim(), rng);
  }

  const ModelConfig& config() const { return config_; }
  std::size_t ae_dim() const { return config_.ae_dim(); }

  nn::Backbone<T>& backbone() { return backbone_; }
  const nn::Backbone<T>& backbone() const { return backbone_; }
  nn::AttentionIntegrator<T>& attention() { return attention_; }
  const nn::AttentionIntegrator<T>& attention() const { return attention_; }
  nn::ProjectionHead<T>& projection() { return projection_; }
  const nn::ProjectionHead<T>& projection() const { return projection_; }

  /// Learnable tensors. Without the contrastive heads only the backbone (and
  /// the integrator, when AEs are on) are returned.
  NamedTensors<T> parameters(bool with_projection = true) const {
    NamedTensors<T> out = backbone_.parameters();
    if (config_.use_ae)
      for (auto& p : attention_.parameters()) out.push_back(p);
    if (with_projection)
      for (auto& p : projection_.parameters()) out.push_back(p);
    return out;
  }

  NamedTensors<T> buffers() const { return backbone_.buffers(); }

  /// Everything a checkpoint holds: all parameters, then buffers.
  NamedTensors<T> state() const {
    auto out = parameters(true);
    for (auto& b : buffers()) out.push_back(b);
    return out;
  }

  /// Per-sample tokens [B × t × D]: the backbone embeddings of each image and
  /// its augmentations, after integration. Without AEs, t = 1 and no
  /// integration happens.
  Tensor<T> tokens(const data::LabeledDataset& ds, const std::vector<std::size_t>& ids,
                   const std::vector<data::AugmentationKind>& augmentations, nn::Mode mode) const {
    const std::size_t t = config_.token_count();
    if (config_.use_ae && augmentations.size() != config_.augmentation_count)
      throw ContractError("model expects " + std::to_string(config_.augmentation_count) + " augmentations, got " +
                          std::to_string(augmentations.size()));
    auto images = image_batch(ds, ids, config_.use_ae ? augmentations : std::vector<data::AugmentationKind>{});
    auto emb = backbone_.forward(images, mode);
    auto tok = reshape(emb, {ids.size(), t, config_.backbone.embedding_dim()});
    return config_.use_ae ? attention_.forward(tok) : tok;
  }

 private:
  Tensor<T> image_batch(const data::LabeledDataset& ds, const std::vector<std::size_t>& ids,
                        const std::vector<data::AugmentationKind>& augmentations) const {
    const auto& bc = config_.backbone;
    const std::size_t per_image = bc.input_channels * bc.input_height * bc.input_width;
    const std::size_t t = 1 + augmentations.size();
    std::vector<T> buf;
    buf.reserve(ids.size() * t * per_image);
    auto append = [&](const data::Image& img) {
      if (img.channels != bc.input_channels || img.height != bc.input_height || img.width != bc.input_width)
        throw DimensionError("image is " + img.shape_str() + ", backbone expects " + std::to_string(bc.input_channels) +
                             "x" + std::to_string(bc.input_height) + "x" + std::to_string(bc.input_width));
      for (float v : img.pixels) buf.push_back(static_cast<T>(v));
    };
    for (auto id : ids) {
      const auto& img = ds.images.at(id);
      append(img);
      for (auto kind : augmentations) append(data::augment(kind, img));
    }
    return Tensor<T>({ids.size() * t, bc.input_channels, bc.input_height, bc.input_width}, std::move(buf));
  }

  ModelConfig config_;
  nn::Backbone<T> backbone_;
  nn::AttentionIntegrator<T> attention_;
  nn::ProjectionHead<T> projection_;
};

/// Concatenation order of the t tokens of a shuffled AE. Index 0 is always
/// the original image.
inline std::vector<std::size_t> default_shuffle(std::size_t token_count) {
  std::vector<std::size_t> perm{0};
  for (std::size_t j = 2; j < token_count; ++j) perm.push_back(j);
  if (token_count > 1) perm.push_back(1);
  return perm;
}

/// Uniform permutation of the augmented tokens, original kept first.
inline std::vector<std::size_t> random_shuffle(std::size_t token_count, Rng& rng) {
  std::vector<std::size_t> perm(token_count);
  for (std::size_t j = 0; j < token_count; ++j) perm[j] = j;
  for (std::size_t j = token_count; j > 2; --j) std::swap(perm[j - 1], perm[1 + rng.uniform_below(j - 1)]);
  return perm;
}

/// tokens [B × t × D] -> [B × tD], blocks concatenated in `order`.
template <typename T>
Tensor<T> concat_tokens(const Tensor<T>& tokens, const std::vector<std::size_t>& order) {
  const std::size_t b = tokens.dim(0), t = tokens.dim(1), d = tokens.dim(2);
  if (order.size() != t) throw ContractError("token order has " + std::to_string(order.size()) + " entries, need " + std::to_string(t));
  bool identity = true;
  for (std::size_t j = 0; j < t; ++j) identity &= order[j] == j;
  if (identity) return reshape(tokens, {b, t * d});
  std::vector<Tensor<T>> parts;
  for (auto j : order) parts.push_back(slice(tokens, 1, j, 1));
  return reshape(concat(parts, 1), {b, t * d});
}

template <typename T>
struct EpisodeEmbeddings {
  Tensor<T> support;         // [nk × E], ordered AEs
  Tensor<T> query;           // [nq × E], ordered AEs
  Tensor<T> query_shuffled;  // [nq × E]; same as query when shuffling is off
};

/// Embeds support and query sets in one backbone pass so batchnorm sees the
/// whole episode.
template <typename T>
EpisodeEmbeddings<T> embed_episode(const Model<T>& model, const data::LabeledDataset& ds, const data::Episode& ep,
                                   const std::vector<data::AugmentationKind>& augmentations, nn::Mode mode,
                                   std::optional<std::vector<std::size_t>> shuffle = {}) {
  std::vector<std::size_t> ids = ep.support_ids;
  ids.insert(ids.end(), ep.query_ids.begin(), ep.query_ids.end());
  auto tok = model.tokens(ds, ids, augmentations, mode);
  const std::size_t ns = ep.support_ids.size(), nq = ep.query_ids.size(), t = tok.dim(1);
  std::vector<std::size_t> ordered(t);
  for (std::size_t j = 0; j < t; ++j) ordered[j] = j;
  auto all = concat_tokens(tok, ordered);
  EpisodeEmbeddings<T> out{slice(all, 0, 0, ns), slice(all, 0, ns, nq), {}};
  out.query_shuffled = shuffle ? concat_tokens(slice(tok, 0, ns, nq), *shuffle) : out.query;
  return out;
}

}  // namespace cplae::method
