#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "partmix/augment.hpp"
#include "partmix/dataset.hpp"
#include "partmix/encoder.hpp"
#include "partmix/losses.hpp"
#include "partmix/rng.hpp"

namespace partmix {

enum class Regularizer { none, partmix, partmix_no_mining, intra_only, inter_only, mixup, manifold_mixup, cutmix };

std::string_view to_string(Regularizer r);
/// Throws ValidationError for names outside the closed set.
Regularizer regularizer_from_string(std::string_view s);
std::span<const Regularizer> all_regularizers();

bool uses_part_mix(Regularizer r);
bool uses_mining(Regularizer r);
bool uses_pixel_or_feature_mix(Regularizer r);

struct ObjectiveConfig {
  Regularizer regularizer = Regularizer::partmix;
  MixSpec mix;                      // use_inter / use_intra are set from the regularizer
  std::size_t positive_quota = 2;   // U'
  std::size_t negative_quota = 20;  // Q'
  double tau = 0.1;
  double rho = 1.0;
  LossWeights weights;
  double mix_weight = 0.5;  // soft-label term for mixup / manifold mixup / cutmix
  double mix_alpha = 1.0;   // Beta(alpha, alpha) for lambda
  bool full_phase = true;   // false during warm-up: baseline losses only

  /// Mix spec with routes resolved from the regularizer.
  MixSpec resolved_mix() const;
};

/// One image-level or feature-level mix between batch rows a and b.
struct BaselineMix {
  std::size_t a = 0;
  std::size_t b = 0;
  double lambda = 1.0;
  MixLayer layer = MixLayer::input;
  bool cut = false;
  CutBox box;
};

struct BatchPlan {
  std::vector<ContrastiveAnchor> anchors;
  std::vector<BaselineMix> mixes;
  std::size_t positive_candidates = 0;
  std::size_t negative_candidates = 0;
  std::size_t empty_positive_pools = 0;
  std::size_t empty_negative_pools = 0;
};

/// Builds the per-batch regularizer plan from the current model. Empty for
/// `none` and during warm-up. Each anchor draws from its own stream of `rng`.
BatchPlan plan_batch(const Model& model, std::span<const PersonImage> images, const ObjectiveConfig& cfg, Rng rng);
BatchPlan plan_batch_serial(const Model& model, std::span<const PersonImage> images, const ObjectiveConfig& cfg,
                            Rng rng);

struct ObjectiveResult {
  LossBreakdown losses;
  double mix_term = 0.0;  // soft-label term of the pixel/feature mixing baselines
  double total = 0.0;
};

/// Full training objective for one batch under a fixed plan. When `grad` is
/// non-empty it receives d total / d params (same layout as model.params()).
ObjectiveResult evaluate_objective(const Model& model, std::span<const PersonImage> images, const BatchPlan& plan,
                                   const ObjectiveConfig& cfg, std::span<double> grad);

}  // namespace partmix
