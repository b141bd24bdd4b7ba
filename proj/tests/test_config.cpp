#include <gtest/gtest.h>

#include <set>

#include "cplae/app/config.hpp"

using namespace cplae;
using namespace cplae::app;

namespace {

std::string config_error(const json& j) {
  try {
    config_from_json(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

// "section.key" entries whose values differ.
std::set<std::string> diff(const json& a, const json& b) {
  std::set<std::string> out;
  for (const auto& [section, fields] : a.items())
    for (const auto& [key, value] : fields.items())
      if (b.at(section).at(key) != value) out.insert(section + "." + key);
  return out;
}

}  // namespace

TEST(Config, DefaultsFollowTrainingProtocol) {
  const RunConfig c = config_from_json(json::object());
  EXPECT_EQ(c, RunConfig{});
  EXPECT_EQ(c.train.epochs, 100u);
  EXPECT_EQ(c.train.episodes_per_epoch, 100u);
  EXPECT_EQ(c.cplae.negatives, 6u);
  EXPECT_EQ(c.cplae.temperature, 1.0);
  EXPECT_EQ(c.cplae.lambda, 0.1);
  EXPECT_EQ(c.optimizer.halving_period, 20u);
  EXPECT_EQ(c.eval.episodes, 500u);
  EXPECT_EQ(c.eval.threads, 1u);
  EXPECT_EQ(c.data.augmentations, (std::vector<std::string>{"hflip", "vflip", "rot270"}));
  EXPECT_NO_THROW(validate(c));
}

TEST(Config, PartialSectionsKeepDefaults) {
  const auto c = config_from_json(json::parse(R"({"cplae": {"lambda": 0.5}, "train": {"seed": 9}})"));
  EXPECT_EQ(c.cplae.lambda, 0.5);
  EXPECT_EQ(c.train.seed, 9u);
  EXPECT_EQ(c.cplae.negatives, 6u);
}

TEST(Config, UnknownKeysAreRejectedByName) {
  EXPECT_NE(config_error(json::parse(R"({"cplae": {"lamda": 0.1}})")).find("cplae.lamda"), std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"training": {}})")).find("training"), std::string::npos);
}

TEST(Config, TypeErrorsNameTheField) {
  EXPECT_NE(config_error(json::parse(R"({"train": {"epochs": "ten"}})")).find("train.epochs"), std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"train": {"epochs": -1}})")).find("train.epochs"), std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"backbone": {"use_batchnorm": 1}})")).find("backbone.use_batchnorm"),
            std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"backbone": {"channels": [8, "x"]}})")).find("backbone.channels"),
            std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"data": 3})")).find("data"), std::string::npos);
  EXPECT_THROW(config_from_json(json::array()), ConfigError);
}

TEST(Config, EchoRoundTripsExactly) {
  RunConfig c;
  c.data.synth_noise = 0.123456789012345;
  c.backbone.channels = {8, 8, 16, 32};
  c.cplae.anchor_mode = "support_sample";
  c.optimizer.lr = 3.3e-4;
  c.eval.ablation_seeds = {4, 8};
  const json echo = config_to_json(c);
  EXPECT_EQ(config_from_json(echo), c);
  EXPECT_EQ(config_from_json(json::parse(echo.dump())), c);
  for (const auto& s : section_names()) EXPECT_TRUE(echo.contains(s));
}

TEST(Config, ValidationCatchesBadValues) {
  RunConfig c;
  c.cplae.negatives = 20;  // more than q = 15
  EXPECT_THROW(validate(c), ConfigError);
  c = {};
  c.train.preset = "protonet++";
  EXPECT_THROW(validate(c), ConfigError);
  c = {};
  c.data.augmentations = {"hflip"};
  EXPECT_THROW(validate(c), ConfigError);
  c = {};
  c.optimizer.kind = "rmsprop";
  EXPECT_THROW(validate(c), ConfigError);
  c = {};
  c.data.synth_classes = 1;
  EXPECT_THROW(validate(c), ConfigError);
}

TEST(Presets, DifferOnlyInDocumentedFlags) {
  RunConfig base;
  base.train.preset = "custom";
  base.cplae.shuffle_queries = true;
  const json ref = config_to_json(apply_preset(base));
  auto flags_of = [&](const std::string& p) {
    RunConfig c = base;
    c.train.preset = p;
    auto d = diff(config_to_json(apply_preset(c)), ref);
    d.erase("train.preset");
    return d;
  };
  EXPECT_EQ(flags_of("cplae"), std::set<std::string>{});
  EXPECT_EQ(flags_of("cplae_noshuffle"), std::set<std::string>{"cplae.shuffle_queries"});
  EXPECT_EQ(flags_of("protonet_ae"), std::set<std::string>{"cplae.lambda"});
  EXPECT_EQ(flags_of("protonet"), (std::set<std::string>{"cplae.lambda", "cplae.use_ae", "cplae.compute_cpl"}));

  RunConfig p = base;
  p.train.preset = "protonet";
  p = apply_preset(p);
  EXPECT_FALSE(p.cplae.use_ae);
  EXPECT_EQ(p.cplae.lambda, 0.0);
  EXPECT_FALSE(loss_options(p).compute_cpl);
}

TEST(Config, DerivedObjectsCarryTheFields) {
  RunConfig c;
  c.data.n = 3;
  c.data.k = 2;
  c.data.q = 7;
  c.cplae.temperature = 0.5;
  c.cplae.anchor_mode = "support_sample";
  c.optimizer.kind = "sgd_nesterov";
  const auto ep = train_episode(c);
  EXPECT_EQ(ep.n, 3u);
  EXPECT_EQ(ep.k, 2u);
  EXPECT_EQ(ep.q, 7u);
  EXPECT_EQ(loss_options(c).cpl.temperature, 0.5);
  EXPECT_EQ(loss_options(c).cpl.anchor_mode, method::AnchorMode::support_sample);
  EXPECT_EQ(optimizer_config(c).kind, nn::OptimizerKind::sgd_nesterov);
  const auto mc = model_config(c, data::Image(3, 32, 32));
  EXPECT_EQ(mc.ae_dim(), 256u);
  EXPECT_EQ(mc.backbone.input_channels, 3u);
}
