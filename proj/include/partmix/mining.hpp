#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "partmix/augment.hpp"
#include "partmix/encoder.hpp"

namespace partmix {

struct EntropyRecord {
  std::size_t pool_position = 0;
  double entropy_gap = 0.0;
};

struct MinedBanks {
  std::vector<MixedSample> positives;  // at most U'
  std::vector<MixedSample> negatives;  // at most Q'
};

/// |H(C_p(anchor)) - H(C_p(candidate))| over the concatenated part descriptors.
double entropy_gap(const PartDescriptorSet& anchor, const MixedSample& candidate, const AffineView& part_classifier);

/// Entropy of the part classifier's identity distribution for one descriptor set.
double part_entropy(const PartDescriptorSet& parts, const AffineView& part_classifier);

/// Stable selection of the `quota` best records: smallest gaps first when
/// `ascending`, largest first otherwise; ties keep ascending pool position.
std::vector<EntropyRecord> select_by_gap(std::vector<EntropyRecord> records, std::size_t quota, bool ascending);

/// Reliable positives have the smallest entropy gap, reliable negatives the largest.
MinedBanks mine(const PartDescriptorSet& anchor, std::span<const MixedSample> positive_pool,
                std::span<const MixedSample> negative_pool, std::size_t positive_quota, std::size_t negative_quota,
                const AffineView& part_classifier);

}  // namespace partmix
