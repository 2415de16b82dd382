#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <json.hpp>

#include "partmix/config.hpp"
#include "partmix/dataset.hpp"
#include "partmix/encoder.hpp"
#include "partmix/eval.hpp"
#include "partmix/objective.hpp"

namespace partmix {

/// Independent streams derived from one run seed.
struct RunSeeds {
  std::uint64_t data = 0;
  std::uint64_t init = 0;
  std::uint64_t batch = 0;
  std::uint64_t mix = 0;
  std::uint64_t protocol = 0;

  static RunSeeds from(std::uint64_t seed);
};

struct EpochLosses {
  std::size_t epoch = 0;
  double lr = 0.0;
  double id = 0.0, cc = 0.0, sid = 0.0, ml = 0.0, aid = 0.0, cont = 0.0, total = 0.0;
};

struct RunDiagnostics {
  std::size_t optimizer_steps = 0;
  std::size_t aid_evaluations = 0;
  std::size_t cont_evaluations = 0;
  std::size_t warmup_aid_evaluations = 0;
  std::size_t warmup_cont_evaluations = 0;
  std::size_t plans_built = 0;
  std::size_t warmup_plans_built = 0;
  std::size_t empty_positive_pools = 0;
  std::size_t empty_negative_pools = 0;
  std::size_t skipped_anchors = 0;
  std::size_t contrastive_anchors = 0;
};

struct RunRecord {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  Regularizer regularizer = Regularizer::none;
  std::vector<EpochLosses> epochs;
  std::vector<MetricsReport> metrics;
  double wall_clock_seconds = 0.0;
  RunDiagnostics diagnostics;

  /// Mean mAP over the multi-shot protocols; the headline number of a run.
  double headline_map() const;
};

struct TrainHooks {
  /// Called with every regularizer plan after it is built.
  std::function<void(std::size_t epoch, std::size_t batch, const BatchPlan&, std::span<const PersonImage>)> on_plan;
};

struct TrainResult {
  Model model;
  RunRecord record;
};

/// Learning rate in effect during `epoch` (0-based, counted from warm-up start):
/// base lr times decay_factor for every decay epoch <= epoch.
double learning_rate(const OptimizerConfig& opt, std::size_t epoch);

DatasetSplit make_split(const ExperimentConfig& cfg);

/// Warm-up epochs optimise the baseline losses only; later epochs add the
/// configured regularizer. Throws NumericError on a non-finite loss.
TrainResult train(const ExperimentConfig& cfg, const DatasetSplit& split, const TrainHooks* hooks = nullptr);

std::vector<MetricsReport> evaluate_model(const Model& model, const DatasetSplit& split,
                                          const std::vector<std::size_t>& ranks);

/// Untrained model for the run seed of `cfg`.
Model initial_model(const ExperimentConfig& cfg);

void write_losses_csv(std::span<const EpochLosses> epochs, const std::filesystem::path& file);
nlohmann::json to_json(const RunRecord& r);

}  // namespace partmix
