// cplae: synth | train | eval | ablate
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cplae/app/config.hpp"
#include "cplae/app/run.hpp"
#include "cplae/data/dataset.hpp"
#include "cplae/data/synth.hpp"

namespace fs = std::filesystem;
using namespace cplae;

namespace {

constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, const std::string& default_out) {
  c.out = default_out;
  cmd->add_option("--config", c.config, "JSON run config (defaults apply to missing fields)");
  cmd->add_option("--seed", c.seed, "Seed override");
  cmd->add_option("--threads", c.threads, "Evaluation worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
}

app::RunConfig base_config(const Common& c, const fs::path& fallback = {}) {
  if (!c.config.empty()) return app::load_config(c.config);
  if (!fallback.empty() && fs::exists(fallback)) return app::load_config(fallback);
  return {};
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write " + path.string());
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Few-shot learning with contrastive prototypes over augmented embeddings"};
  cli.require_subcommand(1);

  // synth
  auto* synth = cli.add_subcommand("synth", "Generate the synthetic dataset (netpbm images + manifest.jsonl)");
  data::SynthConfig sc;
  std::string synth_out = "synthetic";
  synth->add_option("--classes", sc.class_count, "Number of classes")->capture_default_str();
  synth->add_option("--per-class", sc.samples_per_class, "Images per class")->capture_default_str();
  synth->add_option("--size", sc.image_size, "Image side length")->capture_default_str();
  synth->add_option("--channels", sc.channels, "1 (PGM) or 3 (PPM)")->capture_default_str();
  synth->add_option("--seed", sc.seed, "Generator seed")->capture_default_str();
  synth->add_option("--noise", sc.noise, "Pixel noise std")->capture_default_str();
  synth->add_option("--out", synth_out, "Output directory")->capture_default_str();

  // train
  auto* train = cli.add_subcommand("train", "Meta-train a model; writes config, runlog, summary and checkpoints");
  Common tc;
  add_common(train, tc, "run");
  std::string preset;
  std::optional<std::size_t> epochs, episodes;
  train->add_option("--preset", preset, "protonet | protonet_ae | cplae_noshuffle | cplae | custom");
  train->add_option("--epochs", epochs, "Epoch count override");
  train->add_option("--episodes", episodes, "Episodes per epoch override");

  // eval
  auto* evalc = cli.add_subcommand("eval", "Meta-test a checkpoint on the test classes");
  Common ec;
  add_common(evalc, ec, "");
  std::string checkpoint, export_path;
  std::optional<std::size_t> eval_episodes;
  std::size_t export_episodes = 1;
  evalc->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  evalc->add_option("--episodes", eval_episodes, "Meta-test episode count override");
  evalc->add_option("--export", export_path, "Also write per-sample embeddings to this CSV");
  evalc->add_option("--export-episodes", export_episodes, "Episodes in the embedding export")->capture_default_str();

  // ablate
  auto* ablate = cli.add_subcommand("ablate", "Train and meta-test all four presets over several seeds");
  Common ac;
  add_common(ablate, ac, "ablation");
  std::vector<std::uint64_t> seeds;
  ablate->add_option("--seeds", seeds, "Training seeds (default: eval.ablation_seeds)")->delimiter(',');

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = cli.exit(e);
    return rc == 0 ? 0 : kUsageError;
  }

  try {
    if (*synth) {
      sc.validate();
      const auto ds = data::synth_generate(sc);
      const auto manifest = data::write_dataset(synth_out, ds);
      std::cout << "wrote " << ds.size() << " images in " << ds.class_names.size() << " classes to " << manifest.string()
                << '\n';
    } else if (*train) {
      auto cfg = base_config(tc);
      if (tc.seed) cfg.train.seed = *tc.seed;
      if (tc.threads) cfg.eval.threads = *tc.threads;
      if (!preset.empty()) cfg.train.preset = preset;
      if (epochs) cfg.train.epochs = *epochs;
      if (episodes) cfg.train.episodes_per_epoch = *episodes;
      const auto outcome = app::cmd_train(cfg, tc.out, &std::cout);
      std::cout << "best epoch " << outcome.log.best_epoch + 1;
      if (outcome.log.validation_skipped) std::cout << " (no validation: final epoch kept)";
      std::cout << "; artifacts in " << tc.out << '\n';
    } else if (*evalc) {
      auto cfg = base_config(ec, fs::path(checkpoint).parent_path() / "config.json");
      if (ec.seed) cfg.eval.seed = *ec.seed;
      if (ec.threads) cfg.eval.threads = *ec.threads;
      if (eval_episodes) cfg.eval.episodes = *eval_episodes;
      const auto report = app::cmd_eval(cfg, checkpoint, ec.out);
      std::cout << report.summary_line() << '\n';
      if (report.db_index) std::cout << "DB index: " << eval::exact_text(*report.db_index) << '\n';
      if (!export_path.empty()) {
        const auto eff = app::apply_preset(cfg);
        const auto test = app::load_data(eff).subset(data::Split::test);
        const auto model = app::load_model(eff, test, checkpoint);
        const auto rows =
            eval::export_embeddings(model, test, app::eval_episode(eff), export_episodes, eff.eval.seed, export_path);
        std::cout << "exported " << rows << " embeddings to " << export_path << '\n';
      }
    } else if (*ablate) {
      auto cfg = base_config(ac);
      if (ac.threads) cfg.eval.threads = *ac.threads;
      if (seeds.empty()) seeds = cfg.eval.ablation_seeds;
      if (ac.seed) seeds = {*ac.seed};
      app::validate(cfg);
      const auto table = app::ablation_run(app::load_data(cfg), cfg, seeds, &std::cout);
      const fs::path out = ac.out;
      write_text(out / "ablation.csv", app::ablation_csv(table));
      write_text(out / "ablation.txt", app::ablation_text(table));
      eval::write_json(out / "ablation.json", app::ablation_json(table));
      std::cout << app::ablation_text(table);
    }
  } catch (const ConfigError& e) {
    std::cerr << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return kRuntimeError;
  }
  return 0;
}
