#pragma once

#include <cstdio>
#include <filesystem>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cplae/app/config.hpp"
#include "cplae/data/dataset.hpp"
#include "cplae/data/synth.hpp"
#include "cplae/eval/meta_test.hpp"
#include "cplae/nn/checkpoint.hpp"
#include "cplae/train/trainer.hpp"

namespace cplae::app {

/// Manifest when given, otherwise the configured synthetic set.
inline data::LabeledDataset load_data(const RunConfig& cfg) {
  if (!cfg.data.manifest.empty()) return data::load_dataset(cfg.data.manifest);
  return data::synth_generate(synth_config(cfg));
}

struct Splits {
  data::LabeledDataset train, val, test;
};

inline Splits split_data(const data::LabeledDataset& ds) {
  return {ds.subset(data::Split::train), ds.subset(data::Split::val), ds.subset(data::Split::test)};
}

struct TrainOutcome {
  train::RunLog log;
  std::vector<nn::CheckpointEntry> best, final_state;
};

/// Pre-training (if enabled) and meta-training of a resolved config. The
/// returned model holds the best snapshot.
inline TrainOutcome train_model(const RunConfig& effective, const Splits& s, method::Model<float>& model_out,
                                std::ostream* progress = nullptr) {
  train::Trainer<float> trainer(effective, s.train, &s.val);
  if (effective.train.pretrain) {
    const auto r = trainer.pretrain();
    if (progress) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "pretrain: %zu epochs, train accuracy %.2f%%\n", r.epoch_loss.size(),
                    100.0 * r.accuracy);
      *progress << buf;
    }
  }
  trainer.run(progress);
  TrainOutcome out{trainer.log(), trainer.best_state(), nn::to_entries(trainer.model().state())};
  trainer.restore_best();
  model_out = trainer.model();
  return out;
}

/// Writes config.json, runlog.csv, summary.json, best.ckpt and final.ckpt.
inline TrainOutcome cmd_train(const RunConfig& raw, const std::filesystem::path& out_dir, std::ostream* progress) {
  const RunConfig cfg = apply_preset(raw);
  validate(cfg);
  const auto splits = split_data(load_data(cfg));
  method::Model<float> model;
  auto outcome = train_model(cfg, splits, model, progress);
  std::filesystem::create_directories(out_dir);
  const json echo = config_to_json(cfg);
  eval::write_json(out_dir / "config.json", echo);
  train::write_runlog_csv(out_dir / "runlog.csv", outcome.log);
  eval::write_json(out_dir / "summary.json", train::runlog_summary(outcome.log, echo));
  nn::write_bytes(out_dir / "best.ckpt", nn::encode_checkpoint(outcome.best));
  nn::write_bytes(out_dir / "final.ckpt", nn::encode_checkpoint(outcome.final_state));
  return outcome;
}

/// Builds the architecture described by `cfg` for `ds` and loads a checkpoint.
inline method::Model<float> load_model(const RunConfig& cfg, const data::LabeledDataset& ds,
                                       const std::filesystem::path& checkpoint) {
  if (ds.size() == 0) throw SamplingError("dataset is empty");
  Rng rng(0);
  method::Model<float> model(model_config(cfg, ds.images.front()), rng);
  auto targets = model.state();
  nn::load_checkpoint(checkpoint, targets);
  return model;
}

/// Meta-test on the test split; writes eval.json into `out_dir` when given.
inline eval::EvalReport cmd_eval(const RunConfig& raw, const std::filesystem::path& checkpoint,
                                 const std::filesystem::path& out_dir) {
  const RunConfig cfg = apply_preset(raw);
  validate(cfg);
  const auto test = load_data(cfg).subset(data::Split::test);
  const auto model = load_model(cfg, test, checkpoint);
  auto report = eval::meta_test(model, test, eval_episode(cfg), cfg.eval.episodes, cfg.eval.seed, cfg.eval.threads,
                                cfg.eval.db_index);
  report.config = config_to_json(cfg);
  if (!out_dir.empty()) eval::write_json(out_dir / "eval.json", eval::report_to_json(report));
  return report;
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

struct AblationRow {
  std::string preset;
  std::vector<eval::EvalReport> reports;  // one per seed
  double mean = 0, ci_halfwidth = 0;      // over all episodes of all seeds
  std::optional<double> db_index;         // mean of per-seed DB means
  std::vector<double> seed_means() const {
    std::vector<double> out;
    for (const auto& r : reports) out.push_back(r.mean);
    return out;
  }
};

struct AblationTable {
  std::vector<std::uint64_t> seeds;
  std::size_t n = 0, k = 0;
  std::vector<AblationRow> rows;  // preset order
  json config;                    // base config
};

/// Trains and meta-tests every preset for every seed. All presets share the
/// data, the training episode stream and the test episodes of a seed.
inline AblationTable ablation_run(const data::LabeledDataset& ds, const RunConfig& base,
                                  const std::vector<std::uint64_t>& seeds, std::ostream* progress = nullptr) {
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  const auto splits = split_data(ds);
  AblationTable table;
  table.seeds = seeds;
  table.n = base.eval.n;
  table.k = base.eval.k;
  table.config = config_to_json(base);
  for (const auto& preset : preset_names()) {
    AblationRow row;
    row.preset = preset;
    std::vector<double> pooled, dbs;
    for (auto seed : seeds) {
      RunConfig cfg = base;
      cfg.train.preset = preset;
      cfg.train.seed = seed;
      cfg = apply_preset(cfg);
      validate(cfg);
      method::Model<float> model;
      train_model(cfg, splits, model);
      auto rep = eval::meta_test(model, splits.test, eval_episode(cfg), cfg.eval.episodes, cfg.eval.seed,
                                 cfg.eval.threads, cfg.eval.db_index);
      rep.config = config_to_json(cfg);
      if (progress) {
        *progress << preset << " seed " << seed << ": " << rep.summary_line();
        if (rep.db_index) *progress << "  DB " << eval::exact_text(*rep.db_index);
        *progress << std::endl;
      }
      pooled.insert(pooled.end(), rep.accuracies.begin(), rep.accuracies.end());
      if (rep.db_index) dbs.push_back(*rep.db_index);
      row.reports.push_back(std::move(rep));
    }
    row.mean = eval::mean_of(pooled);
    row.ci_halfwidth = eval::ci95_halfwidth(pooled);
    if (!dbs.empty()) row.db_index = eval::mean_of(dbs);
    table.rows.push_back(std::move(row));
  }
  return table;
}

inline std::string seeds_text(const std::vector<std::uint64_t>& seeds) {
  std::string s;
  for (std::size_t i = 0; i < seeds.size(); ++i) s += (i ? "," : "") + std::to_string(seeds[i]);
  return s;
}

/// preset,mean,ci95,db_index,acc_seed<s>...,db_seed<s>...  (fractions)
inline std::string ablation_csv(const AblationTable& t) {
  std::ostringstream out;
  out << "# seeds: " << seeds_text(t.seeds) << '\n' << "preset,mean,ci95,db_index";
  for (auto s : t.seeds) out << ",acc_seed" << s;
  for (auto s : t.seeds) out << ",db_seed" << s;
  out << '\n';
  for (const auto& r : t.rows) {
    out << r.preset << ',' << eval::exact_text(r.mean) << ',' << eval::exact_text(r.ci_halfwidth) << ','
        << (r.db_index ? eval::exact_text(*r.db_index) : "");
    for (const auto& rep : r.reports) out << ',' << eval::exact_text(rep.mean);
    for (const auto& rep : r.reports) out << ',' << (rep.db_index ? eval::exact_text(*rep.db_index) : "");
    out << '\n';
  }
  return out.str();
}

inline std::string ablation_text(const AblationTable& t) {
  std::ostringstream out;
  out << "seeds: " << seeds_text(t.seeds) << '\n';
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-16s %-28s %s\n", "preset", "accuracy", "db_index");
  out << buf;
  for (const auto& r : t.rows) {
    const std::string db = r.db_index ? ([&] {
      char b[32];
      std::snprintf(b, sizeof b, "%.4f", *r.db_index);
      return std::string(b);
    })()
                                      : std::string("-");
    std::snprintf(buf, sizeof buf, "%-16s %-28s %s\n", r.preset.c_str(),
                  eval::format_accuracy(t.n, t.k, r.mean, r.ci_halfwidth).c_str(), db.c_str());
    out << buf;
  }
  return out.str();
}

inline json ablation_json(const AblationTable& t) {
  json j;
  j["seeds"] = t.seeds;
  j["config"] = t.config;
  j["rows"] = json::array();
  for (const auto& r : t.rows) {
    j["rows"].push_back({{"preset", r.preset},
                         {"mean", r.mean},
                         {"ci_halfwidth", r.ci_halfwidth},
                         {"summary", eval::format_accuracy(t.n, t.k, r.mean, r.ci_halfwidth)},
                         {"db_index", r.db_index ? json(*r.db_index) : json(nullptr)},
                         {"seed_means", r.seed_means()}});
  }
  return j;
}

}  // namespace cplae::app
