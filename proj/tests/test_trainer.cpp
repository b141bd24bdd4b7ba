#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cplae/app/config.hpp"
#include "cplae/app/run.hpp"
#include "cplae/data/synth.hpp"
#include "cplae/train/trainer.hpp"

using namespace cplae;
using namespace cplae::train;

namespace {

// 8×8 images, two conv blocks, 3-way 2-shot 4-query episodes.
app::RunConfig small_config(const std::string& preset = "cplae", bool bn = false) {
  app::RunConfig c;
  c.data.n = 3;
  c.data.k = 2;
  c.data.q = 4;
  c.backbone.block_count = 2;
  c.backbone.channels = {4, 4};
  c.backbone.use_batchnorm = bn;
  c.cplae.negatives = 2;
  c.optimizer.lr = 1e-3;
  c.train.preset = preset;
  c.train.epochs = 2;
  c.train.episodes_per_epoch = 3;
  c.train.val_episodes = 4;
  c.train.seed = 5;
  c.eval.n = 3;
  c.eval.k = 2;
  c.eval.q = 4;
  return app::apply_preset(c);
}

const app::Splits& small_splits() {
  static const auto s = [] {
    data::SynthConfig sc;
    sc.class_count = 20;
    sc.samples_per_class = 12;
    sc.image_size = 8;
    sc.seed = 13;
    return app::split_data(data::synth_generate(sc));
  }();
  return s;
}

std::string file_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<double>> values_of(const NamedTensors<float>& ts) {
  std::vector<std::vector<double>> out;
  for (const auto& [name, t] : ts) out.emplace_back(t.values().begin(), t.values().end());
  return out;
}

}  // namespace

TEST(TrainStep, ZeroLambdaTotalEqualsFsl) {
  const auto cfg = small_config("protonet_ae");
  Trainer<float> tr(cfg, small_splits().train);
  nn::Optimizer<float> opt(app::optimizer_config(cfg), tr.trainable());
  for (std::size_t i = 0; i < 3; ++i) {
    Rng rng(episode_seed(5, i));
    const auto ep = data::sample_episode(small_splits().train, app::train_episode(cfg), rng);
    const auto out = train_step(tr.model(), opt, small_splits().train, ep, app::augmentations(cfg),
                                app::loss_options(cfg), rng);
    EXPECT_TRUE(out.cpl_computed);
    EXPECT_GT(out.l_cpl.item(), 0.0f);
    EXPECT_EQ(out.l_total.item(), out.l_fsl.item());
  }
}

TEST(TrainStep, ZeroLearningRateLeavesParametersUnchanged) {
  for (auto kind : {"adam", "sgd_nesterov"}) {
    auto cfg = small_config();
    cfg.optimizer.lr = 0;
    cfg.optimizer.kind = kind;
    Trainer<float> tr(cfg, small_splits().train);
    const auto before = values_of(tr.model().parameters());
    nn::Optimizer<float> opt(app::optimizer_config(cfg), tr.trainable());
    Rng rng(1);
    const auto ep = data::sample_episode(small_splits().train, app::train_episode(cfg), rng);
    train_step(tr.model(), opt, small_splits().train, ep, app::augmentations(cfg), app::loss_options(cfg), rng);
    EXPECT_EQ(values_of(tr.model().parameters()), before) << kind;
  }
}

TEST(TrainStep, NonFiniteLossNamesTheEpisodeSeed) {
  const auto cfg = small_config();
  Trainer<float> tr(cfg, small_splits().train);
  tr.model().projection().b2().mutable_data()[0] = std::nanf("");
  nn::Optimizer<float> opt(app::optimizer_config(cfg), tr.trainable());
  Rng rng(1);
  const auto ep = data::sample_episode(small_splits().train, app::train_episode(cfg), rng);
  try {
    train_step(tr.model(), opt, small_splits().train, ep, app::augmentations(cfg), app::loss_options(cfg), rng,
               987654321);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("987654321"), std::string::npos);
  }
}

TEST(Trainer, ProtonetTrainsOnlyTheBackbone) {
  Trainer<float> proto(small_config("protonet"), small_splits().train);
  EXPECT_EQ(proto.trainable().size(), proto.model().backbone().parameters().size());
  Trainer<float> full(small_config("cplae"), small_splits().train);
  EXPECT_EQ(full.trainable().size(), full.model().parameters(true).size());
}

TEST(Trainer, SingleEpisodeRun) {
  auto cfg = small_config();
  cfg.train.epochs = 1;
  cfg.train.episodes_per_epoch = 1;
  Trainer<float> tr(cfg, small_splits().train, &small_splits().val);
  const auto& log = tr.run();
  ASSERT_EQ(log.steps.size(), 1u);
  ASSERT_EQ(log.epochs.size(), 1u);
  EXPECT_TRUE(std::isfinite(log.steps[0].l_total));
  EXPECT_TRUE(log.epochs[0].val_accuracy.has_value());
}

TEST(Trainer, LearningRateHalvesAtEpochTwenty) {
  auto cfg = small_config();
  cfg.train.epochs = 41;
  cfg.train.episodes_per_epoch = 1;
  Trainer<float> tr(cfg, small_splits().train);
  const auto& log = tr.run();
  EXPECT_EQ(log.epochs[0].lr, 1e-3);
  EXPECT_EQ(log.epochs[19].lr, 1e-3);
  EXPECT_EQ(log.epochs[20].lr, 0.5e-3);
  EXPECT_EQ(log.epochs[40].lr, 0.25e-3);
  for (std::size_t i = 0; i < log.steps.size(); ++i) EXPECT_EQ(log.steps[i].episode, i);
}

TEST(Trainer, BatchnormOffRunsAreBitReproducible) {
  const auto cfg = small_config("cplae", false);
  const auto dir = std::filesystem::temp_directory_path() / "cplae_trainer_det";
  std::string csv[2];
  std::vector<nn::CheckpointEntry> state[2];
  for (int r = 0; r < 2; ++r) {
    Trainer<float> tr(cfg, small_splits().train, &small_splits().val);
    tr.run();
    write_runlog_csv(dir / ("run" + std::to_string(r) + ".csv"), tr.log());
    csv[r] = file_text(dir / ("run" + std::to_string(r) + ".csv"));
    state[r] = tr.best_state();
  }
  EXPECT_EQ(csv[0], csv[1]);
  EXPECT_EQ(nn::encode_checkpoint(state[0]), nn::encode_checkpoint(state[1]));
  std::filesystem::remove_all(dir);

  auto other = cfg;
  other.train.seed = 6;
  Trainer<float> tr(other, small_splits().train);
  tr.run();
  Trainer<float> ref(cfg, small_splits().train);
  ref.run();
  EXPECT_NE(tr.log().steps[0].l_total, ref.log().steps[0].l_total);
}

TEST(Trainer, RunlogCsvLayout) {
  const auto cfg = small_config();
  Trainer<float> tr(cfg, small_splits().train, &small_splits().val);
  tr.run();
  const auto path = std::filesystem::temp_directory_path() / "cplae_runlog.csv";
  write_runlog_csv(path, tr.log());
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "epoch,episode,l_fsl,l_cpl,l_total,val_acc");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 5);
    EXPECT_NE(line.back(), ',');  // validation ran every epoch
  }
  EXPECT_EQ(rows, 6u);
  const auto summary = runlog_summary(tr.log(), app::config_to_json(cfg));
  EXPECT_EQ(summary.at("epochs").size(), 2u);
  EXPECT_TRUE(summary.at("epochs")[0].contains("seconds"));
  std::filesystem::remove(path);
}

// Plain prototypical loss on raw backbone embeddings, by loops in double.
TEST(Trainer, ProtonetLossMatchesBarePrototypicalNetwork) {
  auto cfg = small_config("protonet");
  cfg.train.epochs = 1;
  cfg.train.episodes_per_epoch = 1;
  Trainer<double> tr(cfg, small_splits().train);
  const auto& ds = small_splits().train;
  Rng rng(episode_seed(cfg.train.seed, 0));
  const auto ep = data::sample_episode(ds, app::train_episode(cfg), rng);

  double bare = 0;
  {
    NoGradGuard g;
    auto embed = [&](std::size_t id) {
      const auto& img = ds.images[id];
      std::vector<double> px(img.pixels.begin(), img.pixels.end());
      return tr.model().backbone().forward(Tensor<double>({1, 1, 8, 8}, px), nn::Mode::train).values();
    };
    const std::size_t n = ep.n, k = ep.k, d = 4;
    std::vector<std::vector<double>> protos(n, std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < ep.support_ids.size(); ++i) {
      const auto e = embed(ep.support_ids[i]);
      for (std::size_t j = 0; j < d; ++j) protos[ep.support_labels[i]][j] += e[j] / static_cast<double>(k);
    }
    for (std::size_t i = 0; i < ep.query_ids.size(); ++i) {
      const auto e = embed(ep.query_ids[i]);
      std::vector<double> logits(n);
      for (std::size_t c = 0; c < n; ++c) {
        double s = 0;
        for (std::size_t j = 0; j < d; ++j) s += (e[j] - protos[c][j]) * (e[j] - protos[c][j]);
        logits[c] = -s;
      }
      double mx = logits[0];
      for (double l : logits) mx = std::max(mx, l);
      double z = 0;
      for (double l : logits) z += std::exp(l - mx);
      bare += -(logits[ep.query_labels[i]] - mx - std::log(z));
    }
    bare /= static_cast<double>(ep.query_ids.size());
  }
  tr.run();
  EXPECT_NEAR(tr.log().steps[0].l_fsl, bare, 1e-9);
  EXPECT_EQ(tr.log().steps[0].l_total, tr.log().steps[0].l_fsl);
  EXPECT_EQ(tr.log().steps[0].l_cpl, 0.0);
}

TEST(Trainer, BestCheckpointReproducesValidationAccuracy) {
  auto cfg = small_config("cplae", true);
  cfg.train.epochs = 4;
  Trainer<float> tr(cfg, small_splits().train, &small_splits().val);
  const auto& log = tr.run();
  ASSERT_TRUE(log.best_val_accuracy.has_value());
  for (const auto& e : log.epochs) EXPECT_LE(*e.val_accuracy, *log.best_val_accuracy);
  EXPECT_EQ(*log.epochs[log.best_epoch].val_accuracy, *log.best_val_accuracy);

  const auto path = std::filesystem::temp_directory_path() / "cplae_best.ckpt";
  nn::write_bytes(path, nn::encode_checkpoint(tr.best_state()));
  Trainer<float> fresh(cfg, small_splits().train, &small_splits().val);
  auto targets = fresh.model().state();
  nn::load_checkpoint(path, targets);
  EXPECT_EQ(fresh.validate(), *log.best_val_accuracy);
  tr.restore_best();
  EXPECT_EQ(tr.validate(), *log.best_val_accuracy);

  // save → load → save is byte-identical
  const auto again = std::filesystem::temp_directory_path() / "cplae_best2.ckpt";
  nn::save_checkpoint(again, fresh.model().state());
  EXPECT_EQ(file_text(path), file_text(again));
  std::filesystem::remove(path);
  std::filesystem::remove(again);
}

TEST(Trainer, ValidationSkippedWithTooFewClasses) {
  const auto cfg = small_config();
  const auto tiny_val = small_splits().val.subset(data::Split::val);
  data::LabeledDataset two;
  two.class_names = tiny_val.class_names;
  for (std::size_t i = 0; i < tiny_val.size(); ++i)
    if (tiny_val.labels[i] == tiny_val.labels[0]) {
      two.images.push_back(tiny_val.images[i]);
      two.labels.push_back(tiny_val.labels[i]);
      two.splits.push_back(tiny_val.splits[i]);
    }
  Trainer<float> tr(cfg, small_splits().train, &two);
  EXPECT_FALSE(tr.can_validate());
  const auto& log = tr.run();
  EXPECT_TRUE(log.validation_skipped);
  EXPECT_EQ(log.best_epoch, cfg.train.epochs - 1);
  EXPECT_EQ(nn::encode_checkpoint(tr.best_state()), nn::encode_checkpoint(nn::to_entries(tr.model().state())));
}

TEST(Pretrain, ReachesEightyPercentOnTenClasses) {
  data::SynthConfig sc;
  sc.class_count = 10;
  sc.samples_per_class = 40;
  sc.image_size = 16;
  sc.val_fraction = 0;
  sc.test_fraction = 0;
  const auto ds = data::synth_generate(sc);
  nn::BackboneConfig bc;
  bc.channels = {16, 16, 16, 16};
  bc.input_channels = 1;
  bc.input_height = bc.input_width = 16;
  Rng rng(1);
  nn::Backbone<float> backbone(bc, rng);
  const auto r = pretrain_backbone(backbone, ds, PretrainConfig{}, 1);
  EXPECT_EQ(r.epoch_loss.size(), 30u);
  EXPECT_LT(r.epoch_loss.back(), r.epoch_loss.front());
  EXPECT_GT(r.accuracy, 0.8);
}

TEST(Pretrain, BatchnormOffIsBitReproducible) {
  const auto& ds = small_splits().train;
  nn::BackboneConfig bc;
  bc.block_count = 2;
  bc.channels = {4, 4};
  bc.input_channels = 1;
  bc.input_height = bc.input_width = 8;
  bc.use_batchnorm = false;
  std::vector<unsigned char> bytes[2];
  for (int r = 0; r < 2; ++r) {
    Rng rng(3);
    nn::Backbone<float> b(bc, rng);
    pretrain_backbone(b, ds, PretrainConfig{2, 16, 1e-3}, 8);
    bytes[r] = nn::encode_checkpoint(nn::to_entries(b.parameters()));
  }
  EXPECT_EQ(bytes[0], bytes[1]);
}
