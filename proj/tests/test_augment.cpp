#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "partmix/augment.hpp"
#include "partmix/errors.hpp"

using namespace partmix;

namespace {

PartDescriptorSet labelled_set(double base, std::size_t parts = 6, std::size_t dim = 2) {
  PartDescriptorSet s(parts, dim);
  for (std::size_t k = 0; k < parts; ++k)
    for (std::size_t c = 0; c < dim; ++c) s.part(k)[c] = base + 10.0 * static_cast<double>(k) + static_cast<double>(c);
  return s;
}

// P identities, K images each: K/2 visible then K/2 infrared. Entry i gets base value 100 i.
BankPair toy_banks(std::size_t p, std::size_t k) {
  std::vector<PartDescriptorSet> sets;
  std::vector<int> ids;
  std::vector<Modality> mods;
  for (std::size_t id = 0; id < p; ++id)
    for (std::size_t j = 0; j < k; ++j) {
      sets.push_back(labelled_set(100.0 * static_cast<double>(sets.size())));
      ids.push_back(static_cast<int>(id));
      mods.push_back(j < k / 2 ? Modality::visible : Modality::infrared);
    }
  return make_bank_pair(sets, ids, mods);
}

PersonImage constant_image(double v, int id) {
  PersonImage im;
  im.pixels = Tensor({24, 8, 3});
  std::fill(im.pixels.data.begin(), im.pixels.data.end(), v);
  im.identity = id;
  return im;
}

}  // namespace

TEST_CASE("part_mix substitutes one slot") {
  const auto a = labelled_set(0.0), b = labelled_set(1000.0);
  const auto m = part_mix(a, 1, b, 4);
  for (std::size_t k = 0; k < 6; ++k) {
    const auto& want = k == 1 ? b.part(4) : a.part(k);
    CHECK(std::equal(want.begin(), want.end(), m.part(k).begin()));
  }
  CHECK(part_mix(a, 3, a, 3) == a);
  CHECK_THROWS_AS(part_mix(a, 6, b, 0), ValidationError);
}

TEST_CASE("replay of two slot pairs equals a list rewrite") {
  const auto a = labelled_set(0.0), b = labelled_set(1000.0);
  const std::vector<SlotPair> slots{{0, 0}, {3, 3}};
  const auto r = replay_mix(a, b, slots);
  std::vector<std::vector<double>> list;
  for (std::size_t k = 0; k < 6; ++k) list.emplace_back(a.part(k).begin(), a.part(k).end());
  for (const auto& s : slots) list[s.u].assign(b.part(s.h).begin(), b.part(s.h).end());
  for (std::size_t k = 0; k < 6; ++k) CHECK(std::equal(list[k].begin(), list[k].end(), r.part(k).begin()));
}

TEST_CASE("B = 0 positives equal the anchor") {
  const auto banks = toy_banks(2, 4);
  MixSpec spec;
  spec.mixed_parts = 0;
  const auto& anchor = banks.entry(0);
  const auto pool = gen_positive(anchor, banks, spec, Rng(1));
  CHECK(pool.size() == 3);
  for (const auto& s : pool) {
    CHECK(s.parts == anchor.parts);
    CHECK(s.replaced_slots.empty());
  }
}

TEST_CASE("inter positive with B = 1 differs from the anchor in one matching slot") {
  const auto banks = toy_banks(2, 4);
  MixSpec spec;
  spec.mixed_parts = 1;
  spec.use_intra = false;
  const auto& anchor = banks.entry(0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (const auto& s : gen_positive(anchor, banks, spec, Rng(seed))) {
      CHECK(s.route == Route::inter);
      CHECK(s.role == Role::positive);
      REQUIRE(s.replaced_slots.size() == 1);
      const auto k = s.replaced_slots[0].u;
      CHECK(s.replaced_slots[0].h == k);
      const auto& donor = banks.entry(s.donor_index);
      CHECK(donor.modality == Modality::infrared);
      CHECK(donor.identity == anchor.identity);
      for (std::size_t j = 0; j < 6; ++j) {
        const auto& want = j == k ? donor.parts.part(k) : anchor.parts.part(j);
        CHECK(std::equal(want.begin(), want.end(), s.parts.part(j).begin()));
      }
    }
  }
}

TEST_CASE("pool sizes match a hand count on a P = 2, K = 4 batch") {
  const auto banks = toy_banks(2, 4);
  MixSpec spec;  // B = 2, both routes
  // Visible anchor of identity 0: two infrared and one visible same-identity donor,
  // two infrared and two visible other-identity donors.
  const auto& anchor = banks.entry(0);
  const auto pos = gen_positive(anchor, banks, spec, Rng(2));
  const auto neg = gen_negative(anchor, banks, spec, Rng(3));
  CHECK(pos.size() == 3);
  CHECK(neg.size() == 3 + 4);
  std::size_t inter = 0;
  for (const auto& s : pos) inter += s.route == Route::inter;
  CHECK(inter == 2);
  // Same-identity negatives come first and shift slots; others keep them.
  for (std::size_t i = 0; i < neg.size(); ++i) {
    const bool same = neg[i].donor_identity == anchor.identity;
    CHECK(same == (i < 3));
    std::set<std::size_t> written;
    for (const auto& sp : neg[i].replaced_slots) {
      CHECK((same ? sp.u != sp.h : sp.u == sp.h));
      written.insert(sp.u);
    }
    CHECK(written.size() == 2);
  }
}

TEST_CASE("negative branches place donor slots as specified") {
  const auto banks = toy_banks(2, 4);
  MixSpec spec;
  spec.mixed_parts = 1;
  const auto& anchor = banks.entry(1);
  for (const auto& s : gen_negative(anchor, banks, spec, Rng(4))) {
    const auto& donor = banks.entry(s.donor_index);
    const auto sp = s.replaced_slots.at(0);
    CHECK(std::equal(donor.parts.part(sp.h).begin(), donor.parts.part(sp.h).end(), s.parts.part(sp.u).begin()));
    CHECK(replay_mix(anchor.parts, donor.parts, s.replaced_slots) == s.parts);
  }
}

TEST_CASE("pools are capped in order") {
  const auto banks = toy_banks(4, 8);
  MixSpec spec;
  spec.positive_cap = 2;
  spec.negative_cap = 5;
  const auto& anchor = banks.entry(0);
  const auto pos = gen_positive(anchor, banks, spec, Rng(5));
  const auto neg = gen_negative(anchor, banks, spec, Rng(6));
  CHECK(pos.size() == 2);
  CHECK(neg.size() == 5);
}

TEST_CASE("anchor without a same-identity donor raises EmptyPoolError") {
  std::vector<PartDescriptorSet> sets{labelled_set(0), labelled_set(100)};
  std::vector<int> ids{0, 1};
  std::vector<Modality> mods{Modality::visible, Modality::infrared};
  const auto banks = make_bank_pair(sets, ids, mods);
  CHECK_THROWS_AS(gen_positive(banks.entry(0), banks, MixSpec{}, Rng(1)), EmptyPoolError);
  CHECK(gen_negative(banks.entry(0), banks, MixSpec{}, Rng(1)).size() == 1);
}

TEST_CASE("mixup endpoints and linearity") {
  const auto a = constant_image(0.2, 1), b = constant_image(0.6, 2);
  CHECK(mixup(a, b, 1.0).pixels.data == a.pixels.data);
  const auto half = mixup(a, b, 0.5);
  for (double v : half.pixels.data) CHECK(v == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(half.labels == LabelWeights{{1, 0.5}, {2, 0.5}});
  CHECK_THROWS_AS(mixup(a, b, 1.5), ValidationError);

  Rng rng(7);
  PersonImage x = a, y = b;
  for (auto& v : x.pixels.data) v = rng.uniform();
  for (auto& v : y.pixels.data) v = rng.uniform();
  const double lam = rng.uniform();
  const auto m = mixup(x, y, lam);
  for (std::size_t i = 0; i < m.pixels.data.size(); ++i)
    CHECK(m.pixels.data[i] == lam * x.pixels.data[i] + (1.0 - lam) * y.pixels.data[i]);
}

TEST_CASE("manifold mixup reduces to mixup at the input layer") {
  Rng rng(8);
  PersonImage x = constant_image(0, 3), y = constant_image(0, 4);
  for (auto& v : x.pixels.data) v = rng.uniform();
  for (auto& v : y.pixels.data) v = rng.uniform();
  const auto mm = manifold_mixup(x.pixels.data, y.pixels.data, 3, 4, 0.3, MixLayer::input);
  const auto mu = mixup(x, y, 0.3);
  CHECK(mm.values == mu.pixels.data);
  CHECK(mm.labels == mu.labels);
  CHECK(manifold_mixup(x.pixels.data, y.pixels.data, 3, 4, 0.0, MixLayer::post_embed).values == y.pixels.data);
}

TEST_CASE("post-embed mixing commutes with pooling") {
  Rng rng(9);
  FeatureMap f1(20, 4), f2(20, 4);
  for (auto& v : f1.values) v = rng.normal();
  for (auto& v : f2.values) v = rng.normal();
  PartMaps m{20, 3, std::vector<double>(60)};
  for (auto& v : m.values) v = rng.uniform();
  const double lam = 0.37;
  FeatureMap mixed(20, 4);
  mixed.values = manifold_mixup(f1.values, f2.values, 0, 1, lam, MixLayer::post_embed).values;
  const auto pm = pool_parts(mixed, m);
  const auto p1 = pool_parts(f1, m), p2 = pool_parts(f2, m);
  for (std::size_t i = 0; i < pm.values.size(); ++i)
    CHECK(pm.values[i] == doctest::Approx(lam * p1.values[i] + (1.0 - lam) * p2.values[i]).epsilon(1e-12));
}

TEST_CASE("cutmix endpoints") {
  const auto a = constant_image(0.1, 1), b = constant_image(0.9, 2);
  const auto keep = cutmix(a, b, 1.0, Rng(1));
  CHECK(keep.box.area() == 0);
  CHECK(keep.pixels.data == a.pixels.data);
  CHECK(keep.effective_lambda == 1.0);
  // At lambda = 0 the unclipped box spans the whole image; clipping to the
  // bounds then decides how much of x2 is pasted.
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    const auto full = cutmix(a, b, 0.0, rng.split(static_cast<std::uint64_t>(t)));
    CHECK(full.box.raw_x1 - full.box.raw_x0 == 8);
    CHECK(full.box.raw_y1 - full.box.raw_y0 == 24);
    CHECK(full.box.area() >= 4 * 12);
    CHECK(full.effective_lambda == doctest::Approx(1.0 - static_cast<double>(full.box.area()) / 192.0).epsilon(1e-15));
  }
}

TEST_CASE("cutmix pastes the donor inside the box only") {
  const auto a = constant_image(0.1, 1), b = constant_image(0.9, 2);
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const double lam = rng.uniform();
    const auto r = cutmix(a, b, lam, rng.split(static_cast<std::uint64_t>(t)));
    std::size_t donor = 0;
    for (std::size_t y = 0; y < 24; ++y)
      for (std::size_t x = 0; x < 8; ++x) {
        const bool inside = x >= r.box.x0 && x < r.box.x1 && y >= r.box.y0 && y < r.box.y1;
        const double v = r.pixels.data[(y * 8 + x) * 3];
        CHECK(v == (inside ? 0.9 : 0.1));
        donor += inside;
      }
    CHECK(donor == r.box.area());
    CHECK(r.effective_lambda == doctest::Approx(1.0 - static_cast<double>(donor) / 192.0).epsilon(1e-15));
    CHECK(r.labels.size() == 2);
    CHECK(r.labels[0].second == r.effective_lambda);
  }
}

TEST_CASE("unclipped cut box area tracks one minus lambda") {
  Rng rng(4);
  double total = 0.0;
  const int n = 2000;
  for (int i = 0; i < n; ++i) {
    const double lam = rng.uniform();
    const auto box = sample_cut_box(24, 8, lam, rng);
    total += std::abs(static_cast<double>(box.unclipped_area()) / 192.0 - (1.0 - lam));
    CHECK(box.x1 <= 8);
    CHECK(box.y1 <= 24);
  }
  CHECK(total / n < 32.0 / 192.0);
}

TEST_CASE("mixed sample json carries provenance") {
  const auto banks = toy_banks(2, 4);
  const auto pool = gen_positive(banks.entry(0), banks, MixSpec{}, Rng(1));
  const auto j = to_json(pool.at(0));
  CHECK(j.contains("anchor_index"));
  CHECK(j.contains("donor_index"));
  CHECK(j.contains("replaced_slots"));
}
