#include "partmix/mining.hpp"

#include <algorithm>
#include <cmath>

#include "partmix/errors.hpp"
#include "partmix/numerics.hpp"

namespace partmix {

double part_entropy(const PartDescriptorSet& parts, const AffineView& part_classifier) {
  if (parts.values.size() != part_classifier.in)
    throw ShapeError("entropy_gap: part classifier expects " + std::to_string(part_classifier.in) + " inputs");
  return shannon_entropy(classify(part_classifier, parts.concat()));
}

double entropy_gap(const PartDescriptorSet& anchor, const MixedSample& candidate, const AffineView& part_classifier) {
  return std::abs(part_entropy(anchor, part_classifier) - part_entropy(candidate.parts, part_classifier));
}

std::vector<EntropyRecord> select_by_gap(std::vector<EntropyRecord> records, std::size_t quota, bool ascending) {
  std::stable_sort(records.begin(), records.end(), [ascending](const EntropyRecord& a, const EntropyRecord& b) {
    return ascending ? a.entropy_gap < b.entropy_gap : a.entropy_gap > b.entropy_gap;
  });
  if (records.size() > quota) records.resize(quota);
  return records;
}

namespace {

std::vector<MixedSample> select_pool(double anchor_entropy, std::span<const MixedSample> pool, std::size_t quota,
                                     bool ascending, const AffineView& part_classifier) {
  std::vector<EntropyRecord> records;
  records.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const double gap = std::abs(anchor_entropy - part_entropy(pool[i].parts, part_classifier));
    if (!std::isfinite(gap)) throw NumericError("mine: non-finite entropy gap");
    records.push_back({i, gap});
  }
  std::vector<MixedSample> out;
  for (const auto& r : select_by_gap(std::move(records), quota, ascending)) out.push_back(pool[r.pool_position]);
  return out;
}

}  // namespace

MinedBanks mine(const PartDescriptorSet& anchor, std::span<const MixedSample> positive_pool,
                std::span<const MixedSample> negative_pool, std::size_t positive_quota, std::size_t negative_quota,
                const AffineView& part_classifier) {
  if (positive_quota < 1 || negative_quota < 1) throw ValidationError("mine: quotas must be >= 1");
  const double h = part_entropy(anchor, part_classifier);
  return {select_pool(h, positive_pool, positive_quota, true, part_classifier),
          select_pool(h, negative_pool, negative_quota, false, part_classifier)};
}

}  // namespace partmix
