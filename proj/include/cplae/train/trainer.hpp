#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cplae/app/config.hpp"
#include "cplae/core/rng.hpp"
#include "cplae/data/dataset.hpp"
#include "cplae/eval/meta_test.hpp"
#include "cplae/method/episode_loss.hpp"
#include "cplae/nn/checkpoint.hpp"
#include "cplae/nn/optimizer.hpp"
#include "cplae/nn/projection.hpp"

namespace cplae::train {

using nlohmann::json;

// Seed streams derived from the run seed.
inline constexpr std::uint64_t kInitStream = 1;
inline constexpr std::uint64_t kEpisodeStream = 2;
inline constexpr std::uint64_t kValidationStream = 3;
inline constexpr std::uint64_t kPretrainStream = 4;

/// Seed of training episode `index` (counted across epochs). The episode
/// and its negative draws replay from this value alone.
inline std::uint64_t episode_seed(std::uint64_t run_seed, std::size_t index) {
  return derive_seed(derive_seed(run_seed, kEpisodeStream), index);
}

struct StepRecord {
  std::size_t epoch = 0, episode = 0;
  std::uint64_t seed = 0;
  double l_fsl = 0, l_cpl = 0, l_total = 0;
  double accuracy = 0;  // training-episode query accuracy from the posteriors
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0;
  double l_fsl = 0, l_cpl = 0, l_total = 0, accuracy = 0;
  std::optional<double> val_accuracy;
  double seconds = 0;
};

struct RunLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  std::optional<double> best_val_accuracy;
  bool validation_skipped = false;
  std::optional<double> pretrain_accuracy;
};

/// epoch,episode,l_fsl,l_cpl,l_total,val_acc. val_acc repeats the epoch's
/// validation accuracy on each of its rows (empty without validation).
/// Numbers are shortest round-trip text so equal runs give equal bytes.
inline void write_runlog_csv(const std::filesystem::path& path, const RunLog& log) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write " + path.string());
  std::map<std::size_t, std::optional<double>> val;
  for (const auto& e : log.epochs) val[e.epoch] = e.val_accuracy;
  out << "epoch,episode,l_fsl,l_cpl,l_total,val_acc\n";
  for (const auto& s : log.steps) {
    out << s.epoch << ',' << s.episode << ',' << eval::exact_text(s.l_fsl) << ',' << eval::exact_text(s.l_cpl) << ','
        << eval::exact_text(s.l_total) << ',';
    if (auto it = val.find(s.epoch); it != val.end() && it->second) out << eval::exact_text(*it->second);
    out << '\n';
  }
  if (!out) throw IngestionError("write failed for " + path.string());
}

/// Machine-readable summary; the only artifact carrying wall-clock times.
inline json runlog_summary(const RunLog& log, const json& config) {
  json j;
  j["config"] = config;
  j["episodes"] = log.steps.size();
  j["best_epoch"] = log.best_epoch;
  j["best_val_accuracy"] = log.best_val_accuracy ? json(*log.best_val_accuracy) : json(nullptr);
  j["validation_skipped"] = log.validation_skipped;
  j["pretrain_accuracy"] = log.pretrain_accuracy ? json(*log.pretrain_accuracy) : json(nullptr);
  j["epochs"] = json::array();
  for (const auto& e : log.epochs) {
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"lr", e.lr},
                           {"l_fsl", e.l_fsl},
                           {"l_cpl", e.l_cpl},
                           {"l_total", e.l_total},
                           {"train_accuracy", e.accuracy},
                           {"val_accuracy", e.val_accuracy ? json(*e.val_accuracy) : json(nullptr)},
                           {"seconds", e.seconds}});
  }
  return j;
}

inline double posterior_accuracy(const std::vector<double>& posteriors, const std::vector<std::size_t>& labels,
                                 std::size_t n) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < n; ++c)
      if (posteriors[i * n + c] > posteriors[i * n + best]) best = c;
    correct += best == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

/// One meta-training iteration: embed, L_fsl, shuffled AEs, L_cpl, L_total,
/// backward, optimizer step. Returns the losses computed before the step.
template <typename T>
method::LossBreakdown<T> train_step(method::Model<T>& model, nn::Optimizer<T>& opt, const data::LabeledDataset& ds,
                                    const data::Episode& ep, const std::vector<data::AugmentationKind>& augmentations,
                                    const method::LossOptions& loss_opt, Rng& rng, std::uint64_t seed_for_diagnostics = 0) {
  const std::string where = "episode seed " + std::to_string(seed_for_diagnostics);
  opt.zero_grad();
  method::LossBreakdown<T> out;
  try {
    out = method::episode_loss(model, ds, ep, augmentations, loss_opt, nn::Mode::train, rng);
  } catch (const DomainError& e) {
    throw TrainingError("numerical failure in " + where + ": " + e.what());
  }
  const double f = out.l_fsl.item(), c = out.l_cpl.item(), t = out.l_total.item();
  if (!std::isfinite(f) || !std::isfinite(c) || !std::isfinite(t)) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "non-finite loss (l_fsl=%g, l_cpl=%g, l_total=%g) in ", f, c, t);
    throw TrainingError(buf + where);
  }
  backward(out.l_total);
  opt.step();
  return out;
}

struct PretrainConfig {
  std::size_t epochs = 30;
  std::size_t batch = 64;
  double lr = 1e-3;
};

struct PretrainResult {
  std::vector<double> epoch_loss;
  double accuracy = 0;  // top-1 on the split afterwards, eval mode
};

/// Mini-batch classification of every class in `ds` with a temporary linear
/// head (discarded afterwards), cross-entropy, Adam.
template <typename T>
PretrainResult pretrain_backbone(nn::Backbone<T>& backbone, const data::LabeledDataset& ds, const PretrainConfig& cfg,
                                 std::uint64_t seed) {
  if (cfg.batch == 0) throw ConfigError("train.pretrain_batch must be >= 1");
  if (ds.size() == 0) throw SamplingError("pre-training split is empty");
  std::map<std::size_t, std::size_t> class_of;
  for (auto l : ds.labels) class_of.emplace(l, 0);
  std::size_t next = 0;
  for (auto& [label, idx] : class_of) idx = next++;
  const auto& bc = backbone.config();
  const std::size_t per_image = bc.input_channels * bc.input_height * bc.input_width;

  Rng rng(derive_seed(seed, kPretrainStream));
  nn::LinearHead<T> head(bc.embedding_dim(), class_of.size(), rng);
  auto params = backbone.parameters();
  for (auto& p : head.parameters()) params.push_back(p);
  nn::OptimizerConfig oc;
  oc.lr = cfg.lr;
  nn::Optimizer<T> opt(oc, params);

  auto batch_of = [&](const std::vector<std::size_t>& ids) {
    std::vector<T> buf;
    buf.reserve(ids.size() * per_image);
    for (auto id : ids)
      for (float v : ds.images[id].pixels) buf.push_back(static_cast<T>(v));
    return Tensor<T>({ids.size(), bc.input_channels, bc.input_height, bc.input_width}, std::move(buf));
  };

  PretrainResult result;
  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_below(i)]);
    double total = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      std::vector<std::size_t> ids(order.begin() + start, order.begin() + std::min(order.size(), start + cfg.batch));
      if (ids.size() < 2 && bc.use_batchnorm) continue;  // batchnorm needs ≥ 2 samples
      const std::size_t b = ids.size(), c = class_of.size();
      std::vector<T> onehot(b * c, T(0));
      for (std::size_t r = 0; r < b; ++r) onehot[r * c + class_of[ds.labels[ids[r]]]] = T(1);
      opt.zero_grad();
      auto lp = log_softmax(head.forward(backbone.forward(batch_of(ids), nn::Mode::train)), 1);
      auto loss = scale(sum(mul(lp, Tensor<T>({b, c}, std::move(onehot)))), static_cast<T>(-1.0 / static_cast<double>(b)));
      if (!std::isfinite(static_cast<double>(loss.item())))
        throw TrainingError("non-finite pre-training loss in epoch " + std::to_string(e));
      backward(loss);
      opt.step();
      total += loss.item();
      ++batches;
    }
    result.epoch_loss.push_back(batches ? total / static_cast<double>(batches) : 0.0);
  }

  NoGradGuard guard;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < ds.size(); start += 256) {
    std::vector<std::size_t> ids;
    for (std::size_t i = start; i < std::min(ds.size(), start + 256); ++i) ids.push_back(i);
    auto logits = head.forward(backbone.forward(batch_of(ids), nn::Mode::eval));
    const std::size_t c = class_of.size();
    for (std::size_t r = 0; r < ids.size(); ++r) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < c; ++j)
        if (logits[r * c + j] > logits[r * c + best]) best = j;
      correct += best == class_of[ds.labels[ids[r]]];
    }
  }
  result.accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
  return result;
}

/// Meta-training driver over an already resolved (preset-applied) config.
template <typename T = float>
class Trainer {
 public:
  /// `val` may be null or too small for n-way episodes; validation is then
  /// skipped and the final epoch counts as best.
  Trainer(app::RunConfig effective, const data::LabeledDataset& train, const data::LabeledDataset* val = nullptr)
      : cfg_(std::move(effective)), train_(train), val_(val) {
    if (train_.size() == 0) throw SamplingError("training split is empty");
    Rng init(derive_seed(cfg_.train.seed, kInitStream));
    model_ = method::Model<T>(app::model_config(cfg_, train_.images.front()), init);
    loss_opt_ = app::loss_options(cfg_);
    augmentations_ = app::augmentations(cfg_);
    episode_cfg_ = app::train_episode(cfg_);
  }

  method::Model<T>& model() { return model_; }
  const method::Model<T>& model() const { return model_; }
  const app::RunConfig& config() const { return cfg_; }
  const RunLog& log() const { return log_; }

  /// Tensors handed to the optimizer. The projection head only learns when
  /// the contrastive term uses it.
  NamedTensors<T> trainable() const { return model_.parameters(loss_opt_.compute_cpl && loss_opt_.cpl.use_projection); }

  PretrainResult pretrain() {
    PretrainConfig pc{cfg_.train.pretrain_epochs, cfg_.train.pretrain_batch, cfg_.train.pretrain_lr};
    auto r = pretrain_backbone(model_.backbone(), train_, pc, cfg_.train.seed);
    log_.pretrain_accuracy = r.accuracy;
    return r;
  }

  bool can_validate() const {
    return val_ && cfg_.train.val_episodes > 0 && val_->classes().size() >= cfg_.eval.n;
  }

  /// Mean accuracy over the fixed validation episodes (same every epoch).
  double validate() const {
    const auto rep = eval::meta_test(model_, *val_, app::eval_episode(cfg_), cfg_.train.val_episodes,
                                     derive_seed(cfg_.train.seed, kValidationStream), cfg_.eval.threads);
    return rep.mean;
  }

  /// Epochs × episodes with the halving schedule, validation after each
  /// epoch and a best-by-validation snapshot.
  const RunLog& run(std::ostream* progress = nullptr) {
    nn::Optimizer<T> opt(app::optimizer_config(cfg_), trainable());
    const bool validating = can_validate();
    log_.validation_skipped = !validating;
    std::size_t counter = 0;
    for (std::size_t epoch = 0; epoch < cfg_.train.epochs; ++epoch) {
      const auto t0 = std::chrono::steady_clock::now();
      EpochRecord rec;
      rec.epoch = epoch;
      rec.lr = nn::lr_schedule(cfg_.optimizer.lr, epoch, cfg_.optimizer.halving_period);
      opt.set_lr(rec.lr);
      for (std::size_t e = 0; e < cfg_.train.episodes_per_epoch; ++e, ++counter) {
        const std::uint64_t seed = episode_seed(cfg_.train.seed, counter);
        Rng rng(seed);
        const auto ep = data::sample_episode(train_, episode_cfg_, rng);
        const auto out = train_step(model_, opt, train_, ep, augmentations_, loss_opt_, rng, seed);
        StepRecord s{epoch, counter, seed, out.l_fsl.item(), out.l_cpl.item(), out.l_total.item(),
                     posterior_accuracy(out.posteriors, ep.query_labels, ep.n)};
        rec.l_fsl += s.l_fsl;
        rec.l_cpl += s.l_cpl;
        rec.l_total += s.l_total;
        rec.accuracy += s.accuracy;
        log_.steps.push_back(s);
      }
      const double count = static_cast<double>(std::max<std::size_t>(1, cfg_.train.episodes_per_epoch));
      rec.l_fsl /= count;
      rec.l_cpl /= count;
      rec.l_total /= count;
      rec.accuracy /= count;
      if (validating) rec.val_accuracy = validate();
      if (!validating || !log_.best_val_accuracy || *rec.val_accuracy > *log_.best_val_accuracy) {
        log_.best_epoch = epoch;
        log_.best_val_accuracy = rec.val_accuracy;
        best_ = nn::to_entries(model_.state());
      }
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log_.epochs.push_back(rec);
      if (progress) {
        char buf[200];
        std::snprintf(buf, sizeof buf, "epoch %zu/%zu lr %.3g loss %.4f (fsl %.4f, cpl %.4f) train acc %.2f%%", epoch + 1,
                      cfg_.train.epochs, rec.lr, rec.l_total, rec.l_fsl, rec.l_cpl, 100.0 * rec.accuracy);
        *progress << buf;
        if (rec.val_accuracy) {
          std::snprintf(buf, sizeof buf, " val acc %.2f%%", 100.0 * *rec.val_accuracy);
          *progress << buf;
        }
        *progress << std::endl;
      }
    }
    if (best_.empty()) best_ = nn::to_entries(model_.state());
    return log_;
  }

  /// Snapshot selected by validation (the final state when not validating).
  const std::vector<nn::CheckpointEntry>& best_state() const { return best_; }

  void restore_best() {
    auto targets = model_.state();
    nn::assign_entries(best_, targets, "best snapshot");
  }

 private:
  app::RunConfig cfg_;
  const data::LabeledDataset& train_;
  const data::LabeledDataset* val_;
  method::Model<T> model_;
  method::LossOptions loss_opt_;
  std::vector<data::AugmentationKind> augmentations_;
  data::EpisodeConfig episode_cfg_;
  RunLog log_;
  std::vector<nn::CheckpointEntry> best_;
};

}  // namespace cplae::train
