#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "partmix/config.hpp"
#include "partmix/trainer.hpp"

namespace partmix {

using RunCallback = std::function<void(const RunRecord&)>;

/// Every regularizer trained on every seed. Runs with the same seed share the
/// dataset split and all seed streams.
std::vector<RunRecord> run_comparison(const ExperimentConfig& base, std::span<const std::string> regularizers,
                                      std::span<const std::uint64_t> seeds, const RunCallback& on_run = {});

/// Mean headline mAP per regularizer.
std::map<std::string, double> mean_headline_map(std::span<const RunRecord> runs);

/// Header: regularizer,seed,protocol,shot_mode,mAP,cmc@k... One row per run and protocol.
void write_comparison_csv(std::span<const RunRecord> runs, const std::filesystem::path& file);

/// Applies one sweep value. M sets the number of parts and B = max(1, round(M / 3)).
ExperimentConfig apply_sweep(const ExperimentConfig& base, const std::string& parameter, double value);

struct AblationRun {
  std::string parameter;
  double value = 0.0;
  ExperimentConfig config;
  RunRecord record;
};

/// One train + eval per sweep value on the dataset of the base seed; each run
/// gets its own model seed.
std::vector<AblationRun> run_ablation(const ExperimentConfig& base, const SweepConfig& sweep,
                                      const RunCallback& on_run = {});

/// Header: parameter,value,B,M,tau,protocol,shot_mode,mAP,cmc@k... |sweep| x |protocols| rows.
void write_ablation_csv(std::span<const AblationRun> runs, const std::filesystem::path& file);

}  // namespace partmix
