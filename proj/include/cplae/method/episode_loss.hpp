#pragma once

#include <optional>
#include <vector>

#include "cplae/method/losses.hpp"
#include "cplae/method/model.hpp"

namespace cplae::method {

template <typename T>
struct LossBreakdown {
  Tensor<T> l_fsl, l_cpl, l_total;
  std::vector<double> posteriors;  // [nq × n]
  bool cpl_computed = false;
};

struct LossOptions {
  CplConfig cpl;
  FslOptions fsl;
  bool compute_cpl = true;  // off for the plain ProtoNet baseline
};

/// Full episode objective. `rng` drives the negative draws (and the token
/// order when random shuffling is on), so replaying the same stream replays
/// the loss exactly.
template <typename T>
LossBreakdown<T> episode_loss(const Model<T>& model, const data::LabeledDataset& ds, const data::Episode& ep,
                              const std::vector<data::AugmentationKind>& augmentations, const LossOptions& opt,
                              nn::Mode mode, Rng& rng) {
  const auto& mc = model.config();
  const bool cpl_on = opt.compute_cpl;
  if (cpl_on) opt.cpl.validate(ep.q);
  std::optional<std::vector<std::size_t>> shuffle;
  if (cpl_on && opt.cpl.shuffle_queries && mc.use_ae)
    shuffle = opt.cpl.random_shuffle ? random_shuffle(mc.token_count(), rng) : default_shuffle(mc.token_count());

  const auto emb = embed_episode(model, ds, ep, augmentations, mode, shuffle);
  const auto protos = compute_prototypes(emb.support, ep.support_labels, ep.n, ep.k);
  auto fsl = fsl_loss(emb.query, protos, ep.query_labels, opt.fsl);

  LossBreakdown<T> out;
  out.l_fsl = fsl.loss;
  out.posteriors = std::move(fsl.posteriors);
  if (!cpl_on) {
    out.l_cpl = Tensor<T>::scalar(T(0));
    out.l_total = out.l_fsl;
    return out;
  }
  std::vector<std::size_t> anchor_classes;
  Tensor<T> anchors;
  if (opt.cpl.anchor_mode == AnchorMode::prototype) {
    for (std::size_t c = 0; c < ep.n; ++c) anchor_classes.push_back(c);
    anchors = protos;
  } else {
    anchor_classes = ep.support_labels;
    anchors = emb.support;
  }
  const auto plan = sample_negative_plan(anchor_classes, ep.query_labels, ep.n, opt.cpl.negatives, rng);
  out.l_cpl = cpl_loss(anchors, emb.query_shuffled, plan, opt.cpl.use_projection ? &model.projection() : nullptr,
                       opt.cpl.temperature, mc.project_anchor);
  out.l_total = total_loss(out.l_fsl, out.l_cpl, opt.cpl.lambda);
  out.cpl_computed = true;
  return out;
}

/// Predicted episode-local labels for the queries (ordered AEs, eval mode).
template <typename T>
std::vector<std::size_t> predict_episode(const Model<T>& model, const data::LabeledDataset& ds, const data::Episode& ep,
                                         const std::vector<data::AugmentationKind>& augmentations) {
  NoGradGuard guard;
  const auto emb = embed_episode(model, ds, ep, augmentations, nn::Mode::eval);
  return classify_queries(emb.query, compute_prototypes(emb.support, ep.support_labels, ep.n, ep.k));
}

}  // namespace cplae::method
