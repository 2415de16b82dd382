// Command-line entry point: train | eval | ablate | compare | gradcheck | oracle.
// Exit codes: 0 success, 1 validation error, 2 numeric failure or failed check.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "partmix/config.hpp"
#include "partmix/errors.hpp"
#include "partmix/eval.hpp"
#include "partmix/experiments.hpp"
#include "partmix/gradcheck.hpp"
#include "partmix/oracles.hpp"
#include "partmix/trainer.hpp"

namespace fs = std::filesystem;
using namespace partmix;

namespace {

struct Options {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  bool dump_mixes = false;
  std::string params;
  std::optional<std::size_t> trials;
};

ExperimentConfig resolve_config(const Options& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  cfg.validate();
  return cfg;
}

void write_json(const fs::path& file, const nlohmann::json& j) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw ValidationError("cannot open " + file.string() + " for writing");
  out << j.dump(2) << '\n';
}

fs::path prepare_out(const Options& o, const ExperimentConfig& cfg) {
  const fs::path dir(o.out);
  fs::create_directories(dir);
  write_json(dir / "config.resolved.json", to_json(cfg));
  return dir;
}

void log_run(const RunRecord& r) {
  std::cerr << "  " << to_string(r.regularizer) << " seed " << r.seed << ": mAP " << r.headline_map() << " ("
            << r.wall_clock_seconds << " s)\n";
}

nlohmann::json plan_to_json(const BatchPlan& plan) {
  nlohmann::json anchors = nlohmann::json::array();
  for (const auto& a : plan.anchors) {
    nlohmann::json pos = nlohmann::json::array(), neg = nlohmann::json::array();
    for (const auto& s : a.banks.positives) pos.push_back(to_json(s));
    for (const auto& s : a.banks.negatives) neg.push_back(to_json(s));
    anchors.push_back({{"anchor", a.anchor}, {"positives", pos}, {"negatives", neg}});
  }
  nlohmann::json mixes = nlohmann::json::array();
  for (const auto& m : plan.mixes) {
    nlohmann::json j{{"a", m.a}, {"b", m.b}, {"lambda", m.lambda},
                     {"layer", m.layer == MixLayer::input ? "input" : "post_embed"}};
    if (m.cut) j["box"] = {{"x0", m.box.x0}, {"x1", m.box.x1}, {"y0", m.box.y0}, {"y1", m.box.y1}};
    mixes.push_back(j);
  }
  return {{"anchors", anchors},
          {"mixes", mixes},
          {"positive_candidates", plan.positive_candidates},
          {"negative_candidates", plan.negative_candidates},
          {"empty_positive_pools", plan.empty_positive_pools},
          {"empty_negative_pools", plan.empty_negative_pools}};
}

int cmd_train(const Options& o) {
  const ExperimentConfig cfg = resolve_config(o);
  const fs::path dir = prepare_out(o, cfg);
  const DatasetSplit split = make_split(cfg);
  TrainHooks hooks;
  std::optional<nlohmann::json> dumped;
  if (o.dump_mixes)
    hooks.on_plan = [&](std::size_t epoch, std::size_t batch, const BatchPlan& plan, std::span<const PersonImage>) {
      if (!dumped) dumped = nlohmann::json{{"epoch", epoch}, {"batch", batch}, {"plan", plan_to_json(plan)}};
    };
  const TrainResult res = train(cfg, split, &hooks);
  write_losses_csv(res.record.epochs, dir / "losses.csv");
  write_metrics_csv(res.record.metrics, dir / "metrics.csv");
  write_metrics_json(res.record.metrics, dir / "metrics.json");
  save_params(res.model, dir / "params.bin");
  write_json(dir / "run.json", to_json(res.record));
  if (o.dump_mixes) write_json(dir / "mixes.json", dumped.value_or(nlohmann::json::object()));
  log_run(res.record);
  return 0;
}

int cmd_eval(const Options& o) {
  const ExperimentConfig cfg = resolve_config(o);
  const fs::path dir = prepare_out(o, cfg);
  const fs::path params = o.params.empty() ? dir / "params.bin" : fs::path(o.params);
  const Model model = load_params(params);
  if (!(model.dims() == cfg.model_dims()))
    throw ShapeError("eval: snapshot dimensions do not match the config");
  const DatasetSplit split = make_split(cfg);
  auto reports = evaluate_model(model, split, cfg.ranks);
  std::vector<PersonImage> queries = split.query;
  reports.push_back(run_self_retrieval(model, queries));
  write_metrics_csv(reports, dir / "metrics.csv");
  write_metrics_json(reports, dir / "metrics.json");
  for (const auto& r : reports)
    std::cerr << "  " << r.protocol.name << " " << to_string(r.protocol.shot_mode) << ": mAP " << r.map_score << '\n';
  return 0;
}

int cmd_ablate(const Options& o) {
  const ExperimentConfig cfg = resolve_config(o);
  const fs::path dir = prepare_out(o, cfg);
  const auto runs = run_ablation(cfg, cfg.experiments.sweep, log_run);
  write_ablation_csv(runs, dir / "ablation.csv");
  return 0;
}

int cmd_compare(const Options& o) {
  const ExperimentConfig cfg = resolve_config(o);
  const fs::path dir = prepare_out(o, cfg);
  std::vector<std::uint64_t> seeds = cfg.experiments.seeds;
  if (o.seed) seeds = {*o.seed};
  const auto runs = run_comparison(cfg, cfg.experiments.regularizers, seeds, log_run);
  write_comparison_csv(runs, dir / "comparison.csv");
  for (const auto& [name, m] : mean_headline_map(runs)) std::cerr << "mean mAP " << name << ": " << m << '\n';
  return 0;
}

int cmd_gradcheck(const Options& o) {
  const ExperimentConfig cfg = resolve_config(o);
  const fs::path dir = prepare_out(o, cfg);
  const auto report = run_gradcheck(cfg, o.trials.value_or(cfg.experiments.gradcheck_trials), cfg.seed);
  write_json(dir / "gradcheck.json", report.to_json());
  for (const auto& op : report.failed_ops()) std::cerr << "FAIL " << op << '\n';
  std::cerr << (report.passed() ? "gradcheck passed" : "gradcheck failed") << " (" << report.entries.size()
            << " checks, " << report.seconds << " s)\n";
  return report.passed() ? 0 : 2;
}

int cmd_oracle(const Options& o) {
  const ExperimentConfig cfg = resolve_config(o);
  const fs::path dir = prepare_out(o, cfg);
  const auto report = run_oracles(o.trials.value_or(cfg.experiments.oracle_instances), cfg.seed);
  write_json(dir / "oracle.json", report.to_json());
  for (const auto& s : report.suites)
    std::cerr << (s.passed() ? "ok   " : "FAIL ") << s.suite << " (" << s.instances << ")"
              << (s.first_failure.empty() ? "" : ": " + s.first_failure) << '\n';
  return report.passed() ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PartMix training and evaluation harness"};
  app.require_subcommand(1);
  Options o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON config file (defaults apply when omitted)");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--seed", o.seed, "Override the run seed");
  };
  struct Command {
    const char* name;
    const char* help;
    int (*run)(const Options&);
  };
  const Command commands[] = {
      {"train", "Train one model and evaluate it", cmd_train},
      {"eval", "Evaluate a params snapshot", cmd_eval},
      {"ablate", "Sweep B, M or tau", cmd_ablate},
      {"compare", "Compare regularizers over seeds", cmd_compare},
      {"gradcheck", "Finite-difference gradient suite", cmd_gradcheck},
      {"oracle", "Brute-force equivalence suites", cmd_oracle},
  };
  int (*selected)(const Options&) = nullptr;
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    add_common(sub);
    if (std::string(c.name) == "train") sub->add_flag("--dump-mixes", o.dump_mixes, "Write mixes.json for the first regularized batch");
    if (std::string(c.name) == "eval") sub->add_option("--params", o.params, "Snapshot path (default <out>/params.bin)");
    if (std::string(c.name) == "gradcheck") sub->add_option("--trials", o.trials, "Number of random trials");
    if (std::string(c.name) == "oracle") sub->add_option("--trials", o.trials, "Instances per suite");
    sub->callback([&selected, run = c.run] { selected = run; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  try {
    return selected(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error at " << e.path() << ": " << e.what() << '\n';
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 2;
  } catch (const EmptyPoolError& e) {
    std::cerr << "sampling failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
