#include "partmix/experiments.hpp"

#include <cmath>
#include <fstream>

#include "partmix/errors.hpp"
#include "partmix/rng.hpp"

namespace partmix {

std::vector<RunRecord> run_comparison(const ExperimentConfig& base, std::span<const std::string> regularizers,
                                      std::span<const std::uint64_t> seeds, const RunCallback& on_run) {
  std::vector<Regularizer> regs;
  for (const auto& name : regularizers) regs.push_back(regularizer_from_string(name));
  std::vector<RunRecord> runs;
  for (std::uint64_t seed : seeds) {
    ExperimentConfig cfg = base;
    cfg.seed = seed;
    const DatasetSplit split = make_split(cfg);
    for (Regularizer r : regs) {
      cfg.objective.regularizer = r;
      runs.push_back(train(cfg, split).record);
      if (on_run) on_run(runs.back());
    }
  }
  return runs;
}

std::map<std::string, double> mean_headline_map(std::span<const RunRecord> runs) {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const auto& r : runs) {
    auto& a = acc[std::string(to_string(r.regularizer))];
    a.first += r.headline_map();
    ++a.second;
  }
  std::map<std::string, double> out;
  for (const auto& [k, v] : acc) out[k] = v.first / static_cast<double>(v.second);
  return out;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw ValidationError("cannot open " + file.string() + " for writing");
  return out;
}

void write_cmc_header(std::ostream& out, const std::vector<std::size_t>& ranks) {
  for (std::size_t k : ranks) out << ",cmc@" << k;
  out << '\n';
}

void write_report_tail(std::ostream& out, const MetricsReport& m) {
  out << m.protocol.name << ',' << to_string(m.protocol.shot_mode) << ',' << format_double(m.map_score);
  for (const auto& [k, v] : m.cmc) out << ',' << format_double(v);
  out << '\n';
}

}  // namespace

void write_comparison_csv(std::span<const RunRecord> runs, const std::filesystem::path& file) {
  auto out = open_csv(file);
  out << "regularizer,seed,protocol,shot_mode,mAP";
  write_cmc_header(out, runs.empty() || runs[0].metrics.empty() ? std::vector<std::size_t>{}
                                                                : runs[0].metrics[0].protocol.ranks);
  for (const auto& r : runs)
    for (const auto& m : r.metrics) {
      out << to_string(r.regularizer) << ',' << r.seed << ',';
      write_report_tail(out, m);
    }
}

ExperimentConfig apply_sweep(const ExperimentConfig& base, const std::string& parameter, double value) {
  ExperimentConfig cfg = base;
  auto count = [&](const char* what) {
    if (!(value >= 0.0) || value != std::floor(value))
      throw ConfigError(std::string("experiments.sweep.values"), std::string(what) + " must be a non-negative integer");
    return static_cast<std::size_t>(value);
  };
  if (parameter == "B") {
    cfg.objective.mix.mixed_parts = count("B");
  } else if (parameter == "M") {
    cfg.parts = count("M");
    cfg.objective.mix.mixed_parts = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(value / 3.0)));
  } else if (parameter == "tau") {
    cfg.objective.tau = value;
  } else {
    throw ConfigError("experiments.sweep.parameter", "must be B, M or tau");
  }
  cfg.validate();
  return cfg;
}

std::vector<AblationRun> run_ablation(const ExperimentConfig& base, const SweepConfig& sweep,
                                      const RunCallback& on_run) {
  std::vector<ExperimentConfig> configs;
  for (double v : sweep.values) configs.push_back(apply_sweep(base, sweep.parameter, v));
  const DatasetSplit split = make_split(base);
  const Rng model_seeds = Rng(base.seed).split("ablation");
  std::vector<AblationRun> runs;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    ExperimentConfig cfg = configs[i];
    cfg.seed = model_seeds.split(static_cast<std::uint64_t>(i))();
    runs.push_back({sweep.parameter, sweep.values[i], cfg, train(cfg, split).record});
    if (on_run) on_run(runs.back().record);
  }
  return runs;
}

void write_ablation_csv(std::span<const AblationRun> runs, const std::filesystem::path& file) {
  auto out = open_csv(file);
  out << "parameter,value,B,M,tau,protocol,shot_mode,mAP";
  write_cmc_header(out, runs.empty() || runs[0].record.metrics.empty() ? std::vector<std::size_t>{}
                                                                       : runs[0].record.metrics[0].protocol.ranks);
  for (const auto& r : runs)
    for (const auto& m : r.record.metrics) {
      out << r.parameter << ',' << format_double(r.value) << ',' << r.config.objective.mix.mixed_parts << ','
          << r.config.parts << ',' << format_double(r.config.objective.tau) << ',';
      write_report_tail(out, m);
    }
}

}  // namespace partmix
