#include "partmix/augment.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

#include "partmix/errors.hpp"

namespace partmix {

void MixSpec::validate(std::size_t parts) const {
  if (mixed_parts > parts) throw ValidationError("mix: B must not exceed the number of parts");
  if (positive_cap < 1 || negative_cap < 1) throw ValidationError("mix: candidate caps must be >= 1");
}

const BankEntry& BankPair::entry(std::size_t entry_index) const {
  if (entry_index >= where_.size()) throw ValidationError("bank: entry index out of range");
  const auto [m, pos] = where_[entry_index];
  return bank(m).entries[pos];
}

BankPair make_bank_pair(std::span<const PartDescriptorSet> parts, std::span<const int> identities,
                        std::span<const Modality> modalities) {
  if (parts.size() != identities.size() || parts.size() != modalities.size())
    throw ShapeError("bank: parts, identities and modalities differ in length");
  BankPair banks;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    auto& bank = modalities[i] == Modality::visible ? banks.visible : banks.infrared;
    banks.where_.emplace_back(modalities[i], bank.entries.size());
    bank.entries.push_back({parts[i], identities[i], modalities[i], i});
  }
  return banks;
}

BankPair BankPair::from_batch(std::span<const PersonDescriptor> descriptors, std::span<const PersonImage> images) {
  std::vector<PartDescriptorSet> parts;
  std::vector<int> ids;
  std::vector<Modality> mods;
  for (std::size_t i = 0; i < descriptors.size(); ++i) {
    parts.push_back(descriptors[i].part_set());
    ids.push_back(images[i].identity);
    mods.push_back(images[i].modality);
  }
  return make_bank_pair(parts, ids, mods);
}

PartDescriptorSet part_mix(const PartDescriptorSet& recipient, std::size_t u, const PartDescriptorSet& donor,
                           std::size_t h) {
  if (recipient.dim != donor.dim || recipient.count() != donor.count())
    throw ShapeError("part_mix: recipient and donor shapes differ");
  if (u >= recipient.count() || h >= donor.count()) throw ValidationError("part_mix: slot index out of range");
  PartDescriptorSet out = recipient;
  const auto src = donor.part(h);
  std::copy(src.begin(), src.end(), out.part(u).begin());
  return out;
}

PartDescriptorSet replay_mix(const PartDescriptorSet& anchor, const PartDescriptorSet& donor,
                             std::span<const SlotPair> slots) {
  PartDescriptorSet out = anchor;
  for (const auto& s : slots) out = part_mix(out, s.u, donor, s.h);
  return out;
}

namespace {

std::vector<SlotPair> matching_slots(std::size_t parts, std::size_t b, Rng& rng) {
  std::vector<SlotPair> out;
  for (std::size_t k : rng.sample_without_replacement(parts, b)) out.push_back({k, k});
  return out;
}

// B distinct anchor slots and B distinct donor slots with u != h pairwise.
// Returns empty when no such assignment exists (parts < 2 with B > 0).
std::optional<std::vector<SlotPair>> shifted_slots(std::size_t parts, std::size_t b, Rng& rng) {
  if (b == 0) return std::vector<SlotPair>{};
  if (parts < 2) return std::nullopt;
  const auto u = rng.sample_without_replacement(parts, b);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const auto h = rng.sample_without_replacement(parts, b);
    bool ok = true;
    for (std::size_t i = 0; i < b && ok; ++i) ok = u[i] != h[i];
    if (ok) {
      std::vector<SlotPair> out;
      for (std::size_t i = 0; i < b; ++i) out.push_back({u[i], h[i]});
      return out;
    }
  }
  return std::nullopt;
}

std::vector<MixedSample> cap_pool(std::vector<MixedSample> pool, std::size_t cap, Rng& rng) {
  if (pool.size() <= cap) return pool;
  auto keep = rng.sample_without_replacement(pool.size(), cap);
  std::sort(keep.begin(), keep.end());
  std::vector<MixedSample> out;
  out.reserve(cap);
  for (std::size_t i : keep) out.push_back(std::move(pool[i]));
  return out;
}

MixedSample make_sample(const BankEntry& anchor, const BankEntry& donor, std::vector<SlotPair> slots, Route route,
                        Role role) {
  MixedSample s;
  s.parts = replay_mix(anchor.parts, donor.parts, slots);
  s.anchor_index = anchor.entry_index;
  s.donor_index = donor.entry_index;
  s.anchor_identity = anchor.identity;
  s.donor_identity = donor.identity;
  s.replaced_slots = std::move(slots);
  s.route = route;
  s.role = role;
  return s;
}

std::vector<Route> enabled_routes(const MixSpec& spec) {
  std::vector<Route> r;
  if (spec.use_inter) r.push_back(Route::inter);
  if (spec.use_intra) r.push_back(Route::intra);
  return r;
}

const DescriptorBank& source_bank(const BankEntry& anchor, const BankPair& banks, Route route) {
  return banks.bank(route == Route::inter ? other(anchor.modality) : anchor.modality);
}

}  // namespace

std::vector<MixedSample> gen_positive(const BankEntry& anchor, const BankPair& banks, const MixSpec& spec, Rng rng) {
  const std::size_t parts = anchor.parts.count();
  spec.validate(parts);
  std::vector<MixedSample> pool;
  for (Route route : enabled_routes(spec)) {
    for (const auto& donor : source_bank(anchor, banks, route).entries) {
      if (donor.identity != anchor.identity || donor.entry_index == anchor.entry_index) continue;
      pool.push_back(make_sample(anchor, donor, matching_slots(parts, spec.mixed_parts, rng), route, Role::positive));
    }
  }
  if (pool.empty())
    throw EmptyPoolError("gen_positive: anchor " + std::to_string(anchor.entry_index) +
                         " has no same-identity donor");
  return cap_pool(std::move(pool), spec.positive_cap, rng);
}

std::vector<MixedSample> gen_negative(const BankEntry& anchor, const BankPair& banks, const MixSpec& spec, Rng rng) {
  const std::size_t parts = anchor.parts.count();
  spec.validate(parts);
  std::vector<MixedSample> pool;
  for (Route route : enabled_routes(spec)) {
    for (const auto& donor : source_bank(anchor, banks, route).entries) {
      if (donor.identity != anchor.identity || donor.entry_index == anchor.entry_index) continue;
      auto slots = shifted_slots(parts, spec.mixed_parts, rng);
      if (!slots) continue;
      pool.push_back(make_sample(anchor, donor, std::move(*slots), route, Role::negative));
    }
  }
  for (Route route : enabled_routes(spec)) {
    for (const auto& donor : source_bank(anchor, banks, route).entries) {
      if (donor.identity == anchor.identity) continue;
      pool.push_back(make_sample(anchor, donor, matching_slots(parts, spec.mixed_parts, rng), route, Role::negative));
    }
  }
  return cap_pool(std::move(pool), spec.negative_cap, rng);
}

namespace {

void check_lambda(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("mixing ratio must lie in [0, 1]");
}

LabelWeights mix_labels(int y1, int y2, double lambda) {
  if (y1 == y2) return {{y1, 1.0}};
  return {{y1, lambda}, {y2, 1.0 - lambda}};
}

}  // namespace

MixedPixels mixup(const PersonImage& x1, const PersonImage& x2, double lambda) {
  check_lambda(lambda);
  if (x1.pixels.shape != x2.pixels.shape) throw ShapeError("mixup: image shapes differ");
  MixedPixels out{Tensor(x1.pixels.shape), mix_labels(x1.identity, x2.identity, lambda)};
  for (std::size_t i = 0; i < out.pixels.data.size(); ++i)
    out.pixels.data[i] = lambda * x1.pixels.data[i] + (1.0 - lambda) * x2.pixels.data[i];
  return out;
}

MixedHidden manifold_mixup(std::span<const double> h1, std::span<const double> h2, int y1, int y2, double lambda,
                           MixLayer layer) {
  check_lambda(lambda);
  if (h1.size() != h2.size()) throw ShapeError("manifold_mixup: hidden state shapes differ");
  MixedHidden out{std::vector<double>(h1.size()), mix_labels(y1, y2, lambda), layer};
  for (std::size_t i = 0; i < h1.size(); ++i) out.values[i] = lambda * h1[i] + (1.0 - lambda) * h2[i];
  return out;
}

CutBox sample_cut_box(std::size_t height, std::size_t width, double lambda, Rng& rng) {
  check_lambda(lambda);
  const double cut = std::sqrt(1.0 - lambda);
  const double bw = static_cast<double>(width) * cut;
  const double bh = static_cast<double>(height) * cut;
  CutBox box;
  box.center_x = rng.uniform(0.0, static_cast<double>(width));
  box.center_y = rng.uniform(0.0, static_cast<double>(height));
  box.raw_x0 = std::lround(box.center_x - bw / 2.0);
  box.raw_x1 = std::lround(box.center_x + bw / 2.0);
  box.raw_y0 = std::lround(box.center_y - bh / 2.0);
  box.raw_y1 = std::lround(box.center_y + bh / 2.0);
  auto clip = [](long v, std::size_t hi) { return static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(hi))); };
  box.x0 = clip(box.raw_x0, width);
  box.x1 = clip(box.raw_x1, width);
  box.y0 = clip(box.raw_y0, height);
  box.y1 = clip(box.raw_y1, height);
  return box;
}

Tensor apply_cut(const Tensor& x1, const Tensor& x2, const CutBox& box) {
  if (x1.shape != x2.shape) throw ShapeError("cutmix: image shapes differ");
  Tensor out = x1;
  const std::size_t w = x1.shape[1], c = x1.shape[2];
  for (std::size_t y = box.y0; y < box.y1; ++y)
    for (std::size_t x = box.x0; x < box.x1; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) out.data[(y * w + x) * c + ch] = x2.data[(y * w + x) * c + ch];
  return out;
}

CutMixResult cutmix(const PersonImage& x1, const PersonImage& x2, double lambda, Rng rng) {
  CutMixResult r;
  r.box = sample_cut_box(x1.height(), x1.width(), lambda, rng);
  r.pixels = apply_cut(x1.pixels, x2.pixels, r.box);
  r.effective_lambda =
      1.0 - static_cast<double>(r.box.area()) / static_cast<double>(x1.height() * x1.width());
  r.labels = mix_labels(x1.identity, x2.identity, r.effective_lambda);
  return r;
}

nlohmann::json to_json(const MixedSample& s) {
  nlohmann::json slots = nlohmann::json::array();
  for (const auto& p : s.replaced_slots) slots.push_back({p.u, p.h});
  return {{"anchor_index", s.anchor_index},
          {"donor_index", s.donor_index},
          {"anchor_identity", s.anchor_identity},
          {"donor_identity", s.donor_identity},
          {"replaced_slots", slots},
          {"route", s.route == Route::inter ? "inter" : "intra"},
          {"role", s.role == Role::positive ? "positive" : "negative"}};
}

}  // namespace partmix
