#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "partmix/augment.hpp"
#include "partmix/encoder.hpp"
#include "partmix/mining.hpp"
#include "partmix/numerics.hpp"

namespace partmix {

struct LossWeights {
  double sid = 0.5;
  double ml = 2.5;
  double aid = 0.5;
  double cont = 0.5;

  void validate() const;
};

// Every loss below returns its value and, when sinks are non-empty,
// accumulates `scale` times its gradient into them. Empty spans / views
// (rows == 0) skip that gradient.

struct ContrastiveTerm {
  double value = 0.0;
  std::vector<double> d_positive;  // dL / ds+
  std::vector<double> d_negative;  // dL / ds-
};

/// -log( sum_j exp(s+_j / tau) / (sum_j exp(s+_j / tau) + sum_k exp(s-_k / tau)) ).
ContrastiveTerm contrastive_term(std::span<const double> s_positive, std::span<const double> s_negative, double tau);

struct ContrastiveAnchor {
  std::size_t anchor = 0;  // batch row of the anchor
  MinedBanks banks;
};

struct ContrastiveResult {
  double value = 0.0;
  std::size_t anchors_used = 0;
  std::size_t skipped = 0;  // anchors with an empty positive bank
};

/// Summed over anchors. Mixed samples are rebuilt from their provenance
/// against `parts` (one concatenated part vector per batch row), so the
/// gradient reaches both the anchor and the donor rows. Similarity is cosine.
ContrastiveResult contrastive_loss(ConstRows parts, std::size_t part_dim, std::span<const ContrastiveAnchor> anchors,
                                   double tau, double scale, MutRows d_parts);

/// Value-only form on stored descriptor sets.
double contrastive_loss(std::span<const std::pair<PartDescriptorSet, MinedBanks>> anchors, double tau);

/// Mean cross-entropy of C_p over the concatenated part vectors (N = all rows).
double part_id_loss(ConstRows parts, std::span<const int> labels, const AffineView& part_classifier, double scale,
                    const AffineGrad& grad, MutRows d_parts);

/// Shared classifier on d: mean cross-entropy per modality, summed over modalities.
double id_loss(ConstRows descriptors, std::span<const int> labels, std::span<const Modality> modalities,
               const AffineView& shared, double scale, const AffineGrad& grad, MutRows d_desc);

/// Visible rows through C_v, infrared rows through C_r; per-modality means summed.
double modality_specific_id_loss(ConstRows descriptors, std::span<const int> labels,
                                 std::span<const Modality> modalities, const AffineView& visible,
                                 const AffineView& infrared, double scale, const AffineGrad& grad_visible,
                                 const AffineGrad& grad_infrared, MutRows d_desc);

/// sum_vis KL(C_v(d) || mean C_r(d)) + sum_ir KL(C_r(d) || mean C_v(d)).
/// Mean classifiers are read-only: gradient flows to live classifiers and descriptors.
double modality_learning_loss(ConstRows descriptors, std::span<const Modality> modalities, const AffineView& visible,
                              const AffineView& infrared, const AffineView& mean_visible,
                              const AffineView& mean_infrared, double scale, const AffineGrad& grad_visible,
                              const AffineGrad& grad_infrared, MutRows d_desc);

struct CenterClusterResult {
  double value = 0.0;
  double pull = 0.0;
  double push = 0.0;
  bool single_identity = false;  // push term undefined; pull only
};

/// (1/N) sum ||d_i - z_{y_i}|| + 2/(P(P-1)) sum_{k<l} [rho - ||z_k - z_l||]_+ with
/// z the per-identity batch means. Subgradient 0 at kinks and zero distances.
CenterClusterResult center_cluster_loss(ConstRows descriptors, std::span<const int> labels, double rho, double scale,
                                        MutRows d_desc);

/// Mean over rows of -sum_c w_c log C(d)_c for soft labels.
double soft_label_id_loss(ConstRows descriptors, std::span<const LabelWeights> labels, const AffineView& shared,
                          double scale, const AffineGrad& grad, MutRows d_desc);

struct LossInputs {
  ConstRows descriptors;  // N x (M+1) C_f
  std::size_t feature_dim = 0;
  std::span<const int> labels;
  std::span<const Modality> modalities;
  AffineView shared, part, visible, infrared, mean_visible, mean_infrared;
  std::span<const ContrastiveAnchor> anchors;
  double tau = 0.1;
  double rho = 1.0;
  bool include_aid = false;
  bool include_cont = false;
};

struct LossSinks {
  MutRows d_desc;
  AffineGrad shared, part, visible, infrared;
};

struct LossBreakdown {
  double id = 0.0, cc = 0.0, sid = 0.0, ml = 0.0, aid = 0.0, cont = 0.0;
  double total = 0.0;
  bool aid_evaluated = false;
  bool cont_evaluated = false;
  bool single_identity = false;
  std::size_t contrastive_anchors = 0;
  std::size_t contrastive_skipped = 0;
};

/// L_id + L_cc + w.sid L_sid + w.ml L_ML [+ w.aid L_aid] [+ w.cont L_cont].
LossBreakdown total_loss(const LossInputs& in, const LossWeights& w, const LossSinks* sinks);

}  // namespace partmix
