// Acceptance suite: one PASS/FAIL line per criterion.
//   acceptance [--only 1,2,...] [--config PATH] [--out DIR]
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cplae/app/config.hpp"
#include "cplae/app/run.hpp"
#include "cplae/core/grad_check.hpp"
#include "cplae/data/augment.hpp"
#include "cplae/data/episode.hpp"
#include "cplae/data/synth.hpp"
#include "cplae/eval/meta_test.hpp"
#include "cplae/eval/metrics.hpp"
#include "cplae/method/episode_loss.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace cplae;
using namespace cplae::testing;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::vector<std::size_t> class_major(std::size_t n, std::size_t per_class) {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t i = 0; i < per_class; ++i) out.push_back(c);
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Verdict gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  method::ModelConfig mc;
  mc.backbone.block_count = 2;
  mc.backbone.channels = {3, 4};
  mc.backbone.input_channels = 1;
  mc.backbone.input_height = mc.backbone.input_width = 8;
  Rng rng(14);
  method::Model<double> model(mc, rng);
  const auto ds = data::synth_generate(6, 8, 8, 11);
  const auto ep = data::sample_episode(ds, data::EpisodeConfig{2, 2, 3}, rng);
  method::LossOptions opt;
  opt.cpl.negatives = 2;
  const std::uint64_t seed = rng.next();
  const char* names[] = {"L_fsl", "L_cpl", "L_total"};
  double worst = 0;
  std::string detail;
  bool ok = true;
  for (int which = 0; which < 3; ++which) {
    auto objective = [&] {
      Rng plan_rng(seed);
      auto r = method::episode_loss(model, ds, ep, data::default_augmentations(), opt, nn::Mode::train, plan_rng);
      return which == 0 ? r.l_fsl : (which == 1 ? r.l_cpl : r.l_total);
    };
    // L_fsl does not reach the projection head
    const auto report = grad_check<double>(objective, model.parameters(which != 0));
    std::set<std::string> groups;
    for (const auto& [name, p] : model.parameters(which != 0)) groups.insert(name.substr(0, name.find('.')));
    ok &= report.passed && report.max_rel_error < 1e-4;
    worst = std::max(worst, report.max_rel_error);
    detail += std::string(names[which]) + " " + fmt("%.2e", report.max_rel_error) + " over " +
              std::to_string(report.entries) + " entries (" + std::to_string(groups.size()) + " groups); ";
  }
  const double secs = seconds_since(t0);
  ok &= secs < 60;
  return {ok, detail + "max rel err " + fmt("%.2e", worst) + " < 1e-4, " + fmt("%.1f s", secs)};
}

Verdict loss_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2024);
  double worst_fsl = 0, worst_cpl = 0;
  const int episodes = 60;
  for (int trial = 0; trial < episodes; ++trial) {
    const std::size_t n = 2 + rng.uniform_below(5), q = 1 + rng.uniform_below(8), k = 1 + rng.uniform_below(5);
    const std::size_t e = 2 + rng.uniform_below(14), m = 1 + rng.uniform_below(q);
    auto support = random_tensor<double>({n * k, e}, rng);
    auto queries = random_tensor<double>({n * q, e}, rng);
    const auto qlabels = class_major(n, q);
    const auto protos = method::compute_prototypes(support, class_major(n, k), n, k);
    worst_fsl = std::max(worst_fsl, std::abs(method::fsl_loss(queries, protos, qlabels).loss.item() -
                                             oracle_fsl(queries, protos, qlabels)));

    nn::ProjectionHead<double> h(e, 2 + rng.uniform_below(8), e, rng);
    for (auto* b : {&h.b1(), &h.b2()})
      for (auto& v : b->mutable_data()) v = rng.uniform(-0.5, 0.5);
    const double temperature = rng.uniform(0.2, 2.0);
    const bool support_anchors = trial % 2;
    const auto& anchors = support_anchors ? support : protos;
    const auto anchor_classes = support_anchors ? class_major(n, k) : class_major(n, 1);
    const std::uint64_t seed = rng.next();
    Rng plan_rng(seed);
    const auto plan = method::sample_negative_plan(anchor_classes, qlabels, n, m, plan_rng);
    const double got = method::cpl_loss(anchors, queries, plan, &h, temperature).item();
    worst_cpl = std::max(worst_cpl, std::abs(got - oracle_cpl(anchors, anchor_classes, queries, qlabels, n, m,
                                                               temperature, &h, seed)));
  }
  const double secs = seconds_since(t0);
  return {worst_fsl <= 1e-10 && worst_cpl <= 1e-10 && secs < 60,
          std::to_string(episodes) + " random episodes, max |fsl − oracle| " + fmt("%.1e", worst_fsl) +
              ", max |cpl − oracle| " + fmt("%.1e", worst_cpl) + " (tol 1e-10), " + fmt("%.2f s", secs)};
}

Verdict spot_values() {
  // uniform posterior: query equidistant from five prototypes
  auto protos = T64::matrix(5, 5, {2, 0, 0, 0, 0, 0, 2, 0, 0, 0, 0, 0, 2, 0, 0, 0, 0, 0, 2, 0, 0, 0, 0, 0, 2});
  const double fsl = method::fsl_loss(T64::matrix(1, 5, {0, 0, 0, 0, 0}), protos, {2}).loss.item();

  // equal similarities: constant projection output, n = 5, m = 6
  const std::size_t n = 5, q = 6, m = 6, e = 8;
  Rng rng(3);
  nn::ProjectionHead<double> h(e, e, e, rng);
  for (auto* t : {&h.w1(), &h.b1(), &h.w2()})
    for (auto& v : t->mutable_data()) v = 0.0;
  for (auto& v : h.b2().mutable_data()) v = 0.7;
  const auto plan = method::sample_negative_plan(class_major(n, 1), class_major(n, q), n, m, rng);
  const double cpl =
      method::cpl_loss(random_tensor<double>({n, e}, rng), random_tensor<double>({n * q, e}, rng), plan, &h, 1.0).item();

  const auto total = method::total_loss(T64::scalar(1.25), T64::scalar(3.5), 0.1).item();
  const bool ok = std::abs(fsl - std::log(5.0)) <= 1e-9 && std::abs(cpl - std::log(25.0)) <= 1e-9 &&
                  total == 1.25 + 0.1 * 3.5;
  return {ok, "uniform FSL " + fmt("%.12f", fsl) + " vs ln 5; equal-sim CPL " + fmt("%.12f", cpl) +
                  " vs ln 25; 1.25 + 0.1·3.5 = " + fmt("%.17g", total)};
}

Verdict augmentation_exactness() {
  using namespace data;
  Rng rng(4);
  std::size_t images = 0;
  bool ok = true;
  for (; images < 1000; ++images) {
    const std::size_t side = 1 + rng.uniform_below(12), channels = rng.uniform_below(2) ? 3 : 1;
    Image img(channels, side, side);
    for (auto& v : img.pixels) v = from_byte(static_cast<unsigned char>(rng.uniform_below(256)));
    ok &= rot90(rot90(rot90(rot90(img)))) == img;
    ok &= hflip(hflip(img)) == img;
    ok &= vflip(vflip(img)) == img;
    ok &= rot270(img) == rot90(rot90(rot90(img)));
    ok &= rot180(img) == rot90(rot90(img));
    auto sorted = img.pixels;
    std::sort(sorted.begin(), sorted.end());
    for (auto kind : {AugmentationKind::hflip, AugmentationKind::vflip, AugmentationKind::rot90,
                      AugmentationKind::rot180, AugmentationKind::rot270}) {
      auto px = augment(kind, img).pixels;
      std::sort(px.begin(), px.end());
      ok &= px == sorted;
    }
    if (!ok) break;
  }
  return {ok, "rot90⁴, hflip², vflip², rot270 = rot90³ bit-exact and pixel multisets preserved on " +
                  std::to_string(images) + " random images"};
}

Verdict episode_protocol() {
  const auto ds = data::synth_generate(20, 25, 4, 5);
  const data::EpisodeConfig cfg{5, 5, 15};
  std::size_t draws = 0;
  bool ok = true;
  for (; draws < 1000 && ok; ++draws) {
    Rng rng(derive_seed(99, draws));
    const auto ep = data::sample_episode(ds, cfg, rng);
    ok &= ep.support_ids.size() == 25 && ep.query_ids.size() == 75;
    std::set<std::size_t> all(ep.support_ids.begin(), ep.support_ids.end());
    all.insert(ep.query_ids.begin(), ep.query_ids.end());
    ok &= all.size() == 100;
    ok &= std::set<std::size_t>(ep.classes.begin(), ep.classes.end()).size() == 5;
    std::map<std::size_t, std::size_t> s, q;
    for (std::size_t i = 0; i < 25; ++i) {
      ++s[ep.support_labels[i]];
      ok &= ds.labels[ep.support_ids[i]] == ep.classes[ep.support_labels[i]];
    }
    for (std::size_t i = 0; i < 75; ++i) {
      ++q[ep.query_labels[i]];
      ok &= ds.labels[ep.query_ids[i]] == ep.classes[ep.query_labels[i]];
    }
    for (std::size_t c = 0; c < 5; ++c) ok &= s[c] == 5 && q[c] == 15;
  }
  return {ok, "|S| = 25, |Q| = 75, disjoint and class-balanced over " + std::to_string(draws) + " seeded draws"};
}

// ---------------------------------------------------------------------------

Verdict overfit_smoke(const app::RunConfig& desk) {
  const auto t0 = std::chrono::steady_clock::now();
  app::RunConfig cfg = desk;
  cfg.train.preset = "cplae";
  cfg.train.epochs = 20;
  cfg.train.episodes_per_epoch = 50;
  cfg = app::apply_preset(cfg);
  const auto splits = app::split_data(app::load_data(cfg));
  method::Model<float> model;
  const auto outcome = app::train_model(cfg, splits, model);
  // training classes, 5-way 5-shot 15-query, final weights, eval mode
  Rng rng(0);
  method::Model<float> final_model(app::model_config(cfg, splits.train.images.front()), rng);
  auto targets = final_model.state();
  nn::assign_entries(outcome.final_state, targets, "final state");
  const auto rep = eval::meta_test(final_model, splits.train, app::eval_episode(cfg), 200, 31337, cfg.eval.threads);
  const double secs = seconds_since(t0);
  const double train_acc = outcome.log.epochs.back().accuracy;
  return {rep.mean > 0.9 && secs < 600,
          "training-class episodes after 20×50: " + fmt("%.2f%%", 100 * rep.mean) + " (eval mode, 200 episodes; " +
              "last-epoch running " + fmt("%.2f%%", 100 * train_acc) + "), " + fmt("%.0f s", secs) + " < 600 s"};
}

struct AblationVerdicts {
  Verdict trend, db;
};

AblationVerdicts ablation(const app::RunConfig& desk, const fs::path& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  const auto table = app::ablation_run(app::load_data(desk), desk, seeds, &std::cout);
  const double secs = seconds_since(t0);
  fs::create_directories(out);
  std::ofstream(out / "ablation.csv") << app::ablation_csv(table);
  std::ofstream(out / "ablation.txt") << app::ablation_text(table);
  eval::write_json(out / "ablation.json", app::ablation_json(table));
  std::cout << app::ablation_text(table);

  std::map<std::string, const app::AblationRow*> row;
  for (const auto& r : table.rows) row[r.preset] = &r;
  const double p = row["protonet"]->mean, pae = row["protonet_ae"]->mean, ns = row["cplae_noshuffle"]->mean,
               c = row["cplae"]->mean;
  const bool order = p <= pae && pae <= c;
  const bool gap = (c - p) * 100 >= 1.0;
  const bool noshuffle = (pae <= ns && ns <= c) || std::abs(ns - c) * 100 <= 0.5;
  AblationVerdicts v;
  v.trend = {order && gap && noshuffle && secs < 7200,
             "5 seeds × 500 test episodes: protonet " + fmt("%.2f", 100 * p) + " ≤ protonet_ae " +
                 fmt("%.2f", 100 * pae) + " ≤ cplae " + fmt("%.2f", 100 * c) + (order ? " holds" : " FAILS") +
                 "; gap " + fmt("%.2f", 100 * (c - p)) + " pts (≥ 1); cplae_noshuffle " + fmt("%.2f", 100 * ns) +
                 (noshuffle ? " in range" : " out of range") + "; " + fmt("%.0f s", secs) + " < 7200 s"};

  std::size_t wins = 0;
  std::string per_seed;
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    const double dc = *row["cplae"]->reports[s].db_index, dp = *row["protonet"]->reports[s].db_index;
    wins += dc <= dp;
    per_seed += (s ? ", " : "") + fmt("%.3f", dc) + "/" + fmt("%.3f", dp);
  }
  v.db = {wins >= 4, "DB(cplae) ≤ DB(protonet) in " + std::to_string(wins) + "/5 seeds (cplae/protonet: " + per_seed + ")"};
  return v;
}

Verdict determinism(const app::RunConfig& desk, const fs::path& out) {
  app::RunConfig cfg = desk;
  cfg.backbone.use_batchnorm = false;
  cfg.train.epochs = 2;
  cfg.train.episodes_per_epoch = 10;
  cfg.train.val_episodes = 20;
  cfg.train.seed = 17;
  cfg.eval.episodes = 100;
  cfg.eval.threads = 2;
  std::string csv[2], report[2];
  for (int r = 0; r < 2; ++r) {
    const fs::path dir = out / ("determinism_" + std::to_string(r));
    fs::remove_all(dir);
    app::cmd_train(cfg, dir, nullptr);
    app::cmd_eval(cfg, dir / "best.ckpt", dir);
    std::ifstream a(dir / "runlog.csv"), b(dir / "eval.json");
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    csv[r] = sa.str();
    report[r] = sb.str();
  }
  const bool ok = !csv[0].empty() && !report[0].empty() && csv[0] == csv[1] && report[0] == report[1];
  return {ok, "batchnorm off, seed 17: RunLog CSV (" + std::to_string(csv[0].size()) + " bytes) and EvalReport JSON (" +
                  std::to_string(report[0].size()) + " bytes) identical across two executions"};
}

Verdict reporting() {
  const double mean = eval::mean_of({1.0, 0.0}), ci = eval::ci95_halfwidth({1.0, 0.0});
  const std::string line = eval::format_accuracy(5, 5, mean, ci);
  const bool hand = mean == 0.5 && std::abs(ci - 0.98) < 1e-12 && line == "5-way 5-shot: 50.00 ± 98.00";
  const bool table_style = eval::format_accuracy(5, 5, 0.7431, 0.0034) == "5-way 5-shot: 74.31 ± 0.34";
  return {hand && table_style, "{1, 0}: mean " + fmt("%.2f", mean) + ", ci " + fmt("%.12f", ci) + " (1.96·√0.5/√2); \"" +
                                   line + "\""};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"acceptance criteria"};
  std::vector<int> only;
  std::string config = std::string(CPLAE_SOURCE_DIR) + "/configs/desk.json";
  std::string out = "acceptance_out";
  cli.add_option("--only", only, "Criteria to run")->delimiter(',');
  cli.add_option("--config", config, "Desk-scale run config")->capture_default_str();
  cli.add_option("--out", out, "Artifact directory")->capture_default_str();
  CLI11_PARSE(cli, argc, argv);
  auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };

  std::map<int, Verdict> verdicts;
  auto guarded = [&](int id, const std::function<Verdict()>& fn) {
    if (!wanted(id)) return;
    try {
      verdicts[id] = fn();
    } catch (const std::exception& e) {
      verdicts[id] = {false, std::string("exception: ") + e.what()};
    }
  };
  const app::RunConfig desk = app::load_config(config);

  guarded(1, gradient_correctness);
  guarded(2, loss_oracles);
  guarded(3, spot_values);
  guarded(4, augmentation_exactness);
  guarded(5, episode_protocol);
  guarded(6, [&] { return overfit_smoke(desk); });
  if (wanted(7) || wanted(8)) {
    try {
      const auto v = ablation(desk, out);
      if (wanted(7)) verdicts[7] = v.trend;
      if (wanted(8)) verdicts[8] = v.db;
    } catch (const std::exception& e) {
      for (int id : {7, 8})
        if (wanted(id)) verdicts[id] = {false, std::string("exception: ") + e.what()};
    }
  }
  guarded(9, [&] { return determinism(desk, out); });
  guarded(10, reporting);

  const char* titles[] = {"",
                          "gradient correctness",
                          "loss-oracle equivalence",
                          "closed-form spot values",
                          "augmentation exactness",
                          "episode protocol",
                          "overfit smoke test",
                          "ablation trend at desk scale",
                          "DB index trend",
                          "determinism",
                          "reporting fidelity"};
  int failed = 0;
  std::cout << '\n';
  for (const auto& [id, v] : verdicts) {
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << titles[id] << "): " << v.detail << '\n';
    failed += !v.pass;
  }
  return failed ? 1 : 0;
}
