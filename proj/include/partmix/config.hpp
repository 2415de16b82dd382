#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "partmix/dataset.hpp"
#include "partmix/encoder.hpp"
#include "partmix/objective.hpp"

namespace partmix {

inline constexpr int kConfigVersion = 1;

struct OptimizerConfig {
  double lr = 3.5e-4;
  std::vector<std::size_t> decay_epochs{25, 35};  // counted from the start of warm-up
  double decay_factor = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool operator==(const OptimizerConfig&) const = default;
};

struct ScheduleConfig {
  std::size_t warmup_epochs = 5;
  std::size_t total_epochs = 40;
  std::size_t batches_per_epoch = 10;
  bool operator==(const ScheduleConfig&) const = default;
};

struct BatchConfig {
  std::size_t identities = 16;          // P
  std::size_t images_per_identity = 8;  // K, half per modality
  bool operator==(const BatchConfig&) const = default;
};

struct SweepConfig {
  std::string parameter = "B";  // B | M | tau
  std::vector<double> values{0, 1, 2, 3};
  bool operator==(const SweepConfig&) const = default;
};

struct ExperimentsConfig {
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<std::string> regularizers{"none", "intra_only", "partmix_no_mining", "partmix", "mixup", "cutmix"};
  SweepConfig sweep;
  std::size_t gradcheck_trials = 20;
  std::size_t oracle_instances = 100;
  bool operator==(const ExperimentsConfig&) const = default;
};

struct ExperimentConfig {
  int version = kConfigVersion;
  std::uint64_t seed = 0;
  DatasetSpec dataset;
  std::size_t feature_dim = 16;  // C_f
  std::size_t parts = 6;         // M
  ObjectiveConfig objective;     // regularizer, B/U/Q, U'/Q', tau, rho, weights
  double ema_momentum = 0.9;
  OptimizerConfig optimizer;
  ScheduleConfig schedule;
  BatchConfig batch;
  std::vector<std::size_t> ranks{1, 5, 10, 20};
  ExperimentsConfig experiments;

  ModelDims model_dims() const;
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
/// Strict: unknown keys and wrong types raise ConfigError with the field path.
/// Missing keys take their defaults. `version` is required.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& file);

/// FNV-1a 64 of the canonical (sorted-key, compact) JSON dump.
std::uint64_t config_hash(const ExperimentConfig& c);
std::string hex64(std::uint64_t v);

}  // namespace partmix
