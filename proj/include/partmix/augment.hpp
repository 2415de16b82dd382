#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "partmix/dataset.hpp"
#include "partmix/encoder.hpp"
#include "partmix/rng.hpp"

namespace partmix {

// Part slots are 0-based throughout: slot k addresses part descriptor k.

struct BankEntry {
  PartDescriptorSet parts;
  int identity = 0;
  Modality modality = Modality::visible;
  std::size_t entry_index = 0;  // dense over both banks of a mini-batch
};

struct DescriptorBank {
  Modality modality = Modality::visible;
  std::vector<BankEntry> entries;
};

/// Visible and infrared banks of one mini-batch. entry_index equals the
/// position of the image in the batch.
struct BankPair {
  DescriptorBank visible{Modality::visible, {}};
  DescriptorBank infrared{Modality::infrared, {}};

  const DescriptorBank& bank(Modality m) const { return m == Modality::visible ? visible : infrared; }
  std::size_t size() const { return visible.entries.size() + infrared.entries.size(); }
  const BankEntry& entry(std::size_t entry_index) const;

  static BankPair from_batch(std::span<const PersonDescriptor> descriptors,
                             std::span<const PersonImage> images);

 private:
  std::vector<std::pair<Modality, std::size_t>> where_;
  friend BankPair make_bank_pair(std::span<const PartDescriptorSet>, std::span<const int>,
                                 std::span<const Modality>);
};

BankPair make_bank_pair(std::span<const PartDescriptorSet> parts, std::span<const int> identities,
                        std::span<const Modality> modalities);

enum class Route { inter, intra };
enum class Role { positive, negative };

struct SlotPair {
  std::size_t u = 0;  // slot written in the anchor
  std::size_t h = 0;  // slot read from the donor
  bool operator==(const SlotPair&) const = default;
};

struct MixedSample {
  PartDescriptorSet parts;
  std::size_t anchor_index = 0;
  std::size_t donor_index = 0;
  int anchor_identity = 0;
  int donor_identity = 0;
  std::vector<SlotPair> replaced_slots;
  Route route = Route::inter;
  Role role = Role::positive;
};

struct MixSpec {
  std::size_t mixed_parts = 2;     // B
  std::size_t positive_cap = 16;   // U
  std::size_t negative_cap = 64;   // Q
  bool use_inter = true;
  bool use_intra = true;

  void validate(std::size_t parts) const;
};

/// Copy of `recipient` with slot u replaced by the donor's slot h.
PartDescriptorSet part_mix(const PartDescriptorSet& recipient, std::size_t u, const PartDescriptorSet& donor,
                           std::size_t h);

/// Applies the slot pairs in order; reproduces a MixedSample from its provenance.
PartDescriptorSet replay_mix(const PartDescriptorSet& anchor, const PartDescriptorSet& donor,
                             std::span<const SlotPair> slots);

/// Positive candidates: every same-identity donor on each enabled route,
/// one set of B distinct slots (k, k) per (donor, route). Pool order is
/// inter donors then intra donors, each in batch order; pools larger than U
/// are subsampled keeping that order. Throws EmptyPoolError when the anchor
/// has no same-identity donor on any enabled route.
std::vector<MixedSample> gen_positive(const BankEntry& anchor, const BankPair& banks, const MixSpec& spec,
                                      Rng rng);

/// Negative candidates: same-identity donors with slot pairs (k, h), k != h,
/// then different-identity donors with (k, k); each branch over both enabled
/// routes. Capped at Q like gen_positive. Returns an empty pool rather than throwing.
std::vector<MixedSample> gen_negative(const BankEntry& anchor, const BankPair& banks, const MixSpec& spec,
                                      Rng rng);

/// Soft identity label: (identity, weight) pairs.
using LabelWeights = std::vector<std::pair<int, double>>;

struct MixedPixels {
  Tensor pixels;
  LabelWeights labels;
};

/// lambda * x1 + (1 - lambda) * x2 with matching label weights.
MixedPixels mixup(const PersonImage& x1, const PersonImage& x2, double lambda);

enum class MixLayer { input, post_embed };

struct MixedHidden {
  std::vector<double> values;
  LabelWeights labels;
  MixLayer layer = MixLayer::input;
};

/// Interpolation of two hidden states taken at `layer`. At MixLayer::input the
/// hidden states are the images themselves and the result equals mixup.
MixedHidden manifold_mixup(std::span<const double> h1, std::span<const double> h2, int y1, int y2,
                           double lambda, MixLayer layer);

struct CutBox {
  // Clipped pixel rectangle [x0, x1) x [y0, y1).
  std::size_t x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  // Before clipping, after rounding edges to the pixel grid.
  long raw_x0 = 0, raw_x1 = 0, raw_y0 = 0, raw_y1 = 0;
  double center_x = 0.0, center_y = 0.0;

  std::size_t area() const { return (x1 - x0) * (y1 - y0); }
  long unclipped_area() const { return (raw_x1 - raw_x0) * (raw_y1 - raw_y0); }
};

struct CutMixResult {
  Tensor pixels;
  LabelWeights labels;
  CutBox box;
  double effective_lambda = 1.0;  // 1 - clipped area / (H W)
};

/// Box of size (W sqrt(1-lambda), H sqrt(1-lambda)) centered uniformly in the
/// image; x2 is pasted inside the box, x1 kept elsewhere.
CutBox sample_cut_box(std::size_t height, std::size_t width, double lambda, Rng& rng);
CutMixResult cutmix(const PersonImage& x1, const PersonImage& x2, double lambda, Rng rng);
Tensor apply_cut(const Tensor& x1, const Tensor& x2, const CutBox& box);

nlohmann::json to_json(const MixedSample& s);

}  // namespace partmix
