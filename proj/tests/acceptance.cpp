// Acceptance run: one PASS/FAIL line per criterion, tolerances pinned below.
// Usage: acceptance [criterion numbers...]; no arguments runs all of them.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "partmix/augment.hpp"
#include "partmix/config.hpp"
#include "partmix/eval.hpp"
#include "partmix/experiments.hpp"
#include "partmix/gradcheck.hpp"
#include "partmix/losses.hpp"
#include "partmix/oracles.hpp"
#include "partmix/trainer.hpp"

using namespace partmix;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr std::size_t kGradTrials = 20;
constexpr double kGradBudgetSeconds = 60.0;
constexpr std::size_t kOracleInstances = 100;
constexpr double kOracleBudgetSeconds = 60.0;
constexpr double kLn2Tolerance = 1e-12;
constexpr double kShiftTolerance = 1e-9;
constexpr std::size_t kShiftAnchors = 100;
constexpr double kPartMixMargin = 0.03;     // 3 mAP points
constexpr double kComponentSlack = 0.005;   // 0.5 mAP points
constexpr double kSweepBudgetSeconds = 1800.0;
constexpr std::size_t kChancePermutations = 1000;
constexpr double kChanceLower = 0.005;
constexpr double kChanceUpper = 0.995;
constexpr std::size_t kCutBoxes = 10000;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << std::fixed << v;
  return s.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

void report(int id, const std::string& name, const Outcome& o) {
  std::cout << "criterion " << id << " [" << name << "]: " << (o.pass ? "PASS" : "FAIL") << " - " << o.detail
            << std::endl;
}

ExperimentConfig base_config() { return load_config(PARTMIX_DEFAULT_CONFIG); }

Outcome gradient_suite() {
  const auto r = run_gradcheck(base_config(), kGradTrials, 0);
  double worst = 0.0;
  std::string worst_op;
  std::set<std::string> ops;
  for (const auto& e : r.entries) {
    ops.insert(e.op);
    if (e.max_relative_error > worst) {
      worst = e.max_relative_error;
      worst_op = e.op;
    }
  }
  const bool pass = r.passed() && !r.entries.empty() && r.seconds < kGradBudgetSeconds;
  std::string detail = std::to_string(ops.size()) + " ops x " + std::to_string(kGradTrials) + " trials, worst rel err " +
                       std::to_string(worst) + " (" + worst_op + "), " + fmt(r.seconds, 1) + " s";
  for (const auto& f : r.failed_ops()) detail += ", failed " + f;
  return {pass, detail};
}

Outcome oracle_suite() {
  const auto r = run_oracles(kOracleInstances, 0);
  bool pass = r.passed() && r.seconds < kOracleBudgetSeconds;
  std::string detail;
  for (const auto& s : r.suites) {
    if (s.instances < kOracleInstances) pass = false;
    detail += s.suite + " " + std::to_string(s.instances - s.failures) + "/" + std::to_string(s.instances) + "; ";
    if (!s.first_failure.empty()) detail += "(" + s.first_failure + ") ";
  }
  return {pass, detail + fmt(r.seconds, 2) + " s"};
}

Outcome contrastive_closed_form() {
  double worst_ln2 = 0.0;
  for (double s : {-1.0, -0.3, 0.0, 0.25, 0.9, 1.0}) {
    const double v = contrastive_term(std::vector<double>{s}, std::vector<double>{s}, 0.1).value;
    worst_ln2 = std::max(worst_ln2, std::abs(v - std::log(2.0)));
  }
  Rng rng(3);
  double worst_shift = 0.0;
  for (std::size_t a = 0; a < kShiftAnchors; ++a) {
    std::vector<double> pos(2), neg(20);
    for (auto& v : pos) v = rng.uniform(-1.0, 1.0);
    for (auto& v : neg) v = rng.uniform(-1.0, 1.0);
    const double base = contrastive_term(pos, neg, 0.1).value;
    const double c = rng.uniform(-2.0, 2.0);
    for (auto& v : pos) v += c;
    for (auto& v : neg) v += c;
    worst_shift = std::max(worst_shift, std::abs(contrastive_term(pos, neg, 0.1).value - base));
  }
  const bool pass = worst_ln2 <= kLn2Tolerance && worst_shift <= kShiftTolerance;
  std::ostringstream d;
  d << "max |L - ln 2| = " << worst_ln2 << ", max shift change = " << worst_shift << " over " << kShiftAnchors
    << " anchors";
  return {pass, d.str()};
}

// Runs shared by criteria 4, 5 and 6.
struct Sweep {
  std::vector<RunRecord> runs;
  std::map<std::string, double> mean;
  double seconds = 0.0;
  std::vector<std::uint64_t> seeds;
};

Sweep& sweep() {
  static Sweep s = [] {
    Sweep out;
    const auto cfg = base_config();
    out.seeds = cfg.experiments.seeds;
    const std::vector<std::string> regs{"none", "intra_only", "partmix_no_mining", "partmix", "mixup", "cutmix"};
    const auto t0 = Clock::now();
    out.runs = run_comparison(cfg, regs, out.seeds, [](const RunRecord& r) {
      std::cout << "  run " << to_string(r.regularizer) << " seed " << r.seed << ": mAP " << fmt(r.headline_map())
                << " (" << fmt(r.wall_clock_seconds, 1) << " s)" << std::endl;
    });
    out.seconds = seconds_since(t0);
    out.mean = mean_headline_map(out.runs);
    const fs::path dir = "acceptance_out";
    fs::create_directories(dir);
    write_comparison_csv(out.runs, dir / "comparison.csv");
    return out;
  }();
  return s;
}

Outcome component_chain() {
  auto& s = sweep();
  // Seconds spent on the four chain regularizers only.
  double chain_seconds = 0.0;
  for (const auto& r : s.runs)
    if (r.regularizer == Regularizer::none || r.regularizer == Regularizer::intra_only ||
        r.regularizer == Regularizer::partmix_no_mining || r.regularizer == Regularizer::partmix)
      chain_seconds += r.wall_clock_seconds;
  const double none = s.mean.at("none"), intra = s.mean.at("intra_only"), both = s.mean.at("partmix_no_mining"),
               full = s.mean.at("partmix");
  const bool gain = full - none >= kPartMixMargin;
  const bool steps = intra >= none - kComponentSlack && both >= intra - kComponentSlack && full >= both - kComponentSlack;
  const bool budget = chain_seconds < kSweepBudgetSeconds;
  std::string d = "mean mAP none " + fmt(none) + " -> intra " + fmt(intra) + " -> +inter " + fmt(both) +
                  " -> +mining " + fmt(full) + "; gain " + fmt(100.0 * (full - none), 2) + " pts (need >= " +
                  fmt(100.0 * kPartMixMargin, 1) + "); steps " + (steps ? "ok" : "drop > 0.5 pt") + "; " +
                  fmt(chain_seconds, 0) + " s";
  return {gain && steps && budget, d};
}

Outcome regularizer_comparison() {
  auto& s = sweep();
  const double pm = s.mean.at("partmix"), mu = s.mean.at("mixup"), cm = s.mean.at("cutmix");
  return {pm >= mu && pm >= cm, "mean mAP partmix " + fmt(pm) + ", mixup " + fmt(mu) + ", cutmix " + fmt(cm)};
}

Outcome metric_sanity() {
  auto& s = sweep();
  bool monotone = true;
  std::size_t reports = 0;
  for (const auto& r : s.runs)
    for (const auto& m : r.metrics) {
      ++reports;
      double prev = -1.0;
      for (const auto& [k, v] : m.cmc) {
        if (v < prev) monotone = false;
        prev = v;
      }
    }

  const auto base = base_config();
  bool self_ok = true, chance_ok = true;
  std::string chance_detail;
  for (std::uint64_t seed : s.seeds) {
    ExperimentConfig cfg = base;
    cfg.seed = seed;
    const auto split = make_split(cfg);
    const Model model = initial_model(cfg);
    if (run_self_retrieval(model, split.query).map_score != 1.0) self_ok = false;
    for (const auto& p : default_protocols(cfg.ranks)) {
      if (p.shot_mode != ShotMode::multi) continue;
      const auto& q_images = p.query_modality == Modality::visible ? split.query : split.gallery;
      const auto& g_images = p.gallery_modality == Modality::visible ? split.query : split.gallery;
      std::vector<std::vector<double>> q, g;
      std::vector<int> ql, gl;
      for (auto& d : describe(model, q_images)) q.push_back(std::move(d.concatenated));
      for (auto& d : describe(model, g_images)) g.push_back(std::move(d.concatenated));
      for (const auto& im : q_images) ql.push_back(im.identity);
      for (const auto& im : g_images) gl.push_back(im.identity);
      const auto rankings = rank_all(q, g);
      std::vector<MatchFlags> flags;
      for (std::size_t i = 0; i < rankings.size(); ++i) flags.push_back(match_flags(rankings[i], ql[i], gl));
      const double observed = mean_average_precision(flags);
      const auto band =
          permutation_chance_band(rankings, ql, gl, kChancePermutations, seed, kChanceLower, kChanceUpper);
      const bool inside = observed >= band.lower && observed <= band.upper;
      chance_ok = chance_ok && inside;
      chance_detail += " seed " + std::to_string(seed) + " " + p.name + " " + fmt(observed) + " in [" +
                       fmt(band.lower) + ", " + fmt(band.upper) + "]" + (inside ? "" : " OUTSIDE") + ";";
    }
  }
  std::string d = "CMC monotone on " + std::to_string(reports) + " reports: " + (monotone ? "yes" : "no") +
                  "; self-retrieval mAP = 1: " + (self_ok ? "yes" : "no") + "; untrained chance band (" +
                  std::to_string(kChancePermutations) + " permutations):" + chance_detail;
  return {monotone && self_ok && chance_ok, d};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  auto cfg = base_config();
  cfg.objective.regularizer = Regularizer::partmix;
  const fs::path root = "acceptance_out/determinism";
  const auto split = make_split(cfg);
  for (const char* run : {"a", "b"}) {
    const auto res = train(cfg, split);
    const fs::path dir = root / run;
    fs::create_directories(dir);
    write_losses_csv(res.record.epochs, dir / "losses.csv");
    write_metrics_csv(res.record.metrics, dir / "metrics.csv");
    save_params(res.model, dir / "params.bin");
  }
  bool pass = true;
  std::string d;
  for (const char* f : {"losses.csv", "metrics.csv", "params.bin"}) {
    const auto a = slurp(root / "a" / f), b = slurp(root / "b" / f);
    const bool same = !a.empty() && a == b;
    pass = pass && same;
    d += std::string(f) + (same ? " identical" : " DIFFERS") + " (" + std::to_string(a.size()) + " bytes); ";
  }
  return {pass, d + "partmix seed " + std::to_string(cfg.seed)};
}

Outcome cutmix_geometry() {
  const std::size_t h = 24, w = 8;
  const double bound = static_cast<double>(h + w) / static_cast<double>(h * w);
  Rng rng(8);
  double total = 0.0;
  for (std::size_t i = 0; i < kCutBoxes; ++i) {
    const double lambda = rng.uniform();
    const auto box = sample_cut_box(h, w, lambda, rng);
    total += std::abs(static_cast<double>(box.unclipped_area()) / static_cast<double>(h * w) - (1.0 - lambda));
  }
  const double mean = total / static_cast<double>(kCutBoxes);
  return {mean < bound, "mean |area/HW - (1 - lambda)| = " + fmt(mean, 5) + " over " + std::to_string(kCutBoxes) +
                            " boxes, bound (H+W)/(HW) = " + fmt(bound, 5)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"oracle suite", oracle_suite},
      {"contrastive closed form", contrastive_closed_form},
      {"component chain", component_chain},
      {"regularizer comparison", regularizer_comparison},
      {"metric sanity", metric_sanity},
      {"determinism", determinism},
      {"cutmix geometry", cutmix_geometry},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!wanted.empty() && !wanted.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    report(id, criteria[i].first, o);
    failed += !o.pass;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
