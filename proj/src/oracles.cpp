#include "partmix/oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "partmix/augment.hpp"
#include "partmix/encoder.hpp"
#include "partmix/errors.hpp"
#include "partmix/eval.hpp"
#include "partmix/mining.hpp"
#include "partmix/rng.hpp"

namespace partmix {

bool OracleReport::passed() const {
  return !suites.empty() && std::all_of(suites.begin(), suites.end(), [](const auto& s) { return s.passed(); });
}

nlohmann::json OracleReport::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : suites)
    arr.push_back({{"suite", s.suite},
                   {"instances", s.instances},
                   {"failures", s.failures},
                   {"first_failure", s.first_failure},
                   {"seconds", s.seconds},
                   {"passed", s.passed()}});
  return {{"passed", passed()}, {"seconds", seconds}, {"suites", arr}};
}

namespace {

using Vec = std::vector<double>;
using Nested = std::vector<Vec>;  // naive part list: one vector per slot

struct Failure {
  std::string what;
};

void expect(bool ok, const std::string& what) {
  if (!ok) throw Failure{what};
}

bool close(double a, double b) { return std::abs(a - b) <= kOracleTolerance * std::max(1.0, std::abs(b)); }

Nested random_nested(Rng& rng, std::size_t parts, std::size_t dim) {
  Nested n(parts, Vec(dim));
  for (auto& p : n)
    for (double& v : p) v = rng.normal();
  return n;
}

PartDescriptorSet to_set(const Nested& n) {
  PartDescriptorSet s(n.size(), n.empty() ? 0 : n[0].size());
  for (std::size_t k = 0; k < n.size(); ++k) std::copy(n[k].begin(), n[k].end(), s.part(k).begin());
  return s;
}

Nested to_nested(const PartDescriptorSet& s) {
  Nested n;
  for (std::size_t k = 0; k < s.count(); ++k) n.emplace_back(s.part(k).begin(), s.part(k).end());
  return n;
}

struct RandomBatch {
  std::vector<Nested> parts;
  std::vector<int> ids;
  std::vector<Modality> mods;
  BankPair banks;
};

RandomBatch random_batch(Rng& rng, std::size_t parts, std::size_t dim) {
  RandomBatch b;
  const std::size_t identities = 2 + rng.below(3);
  for (std::size_t p = 0; p < identities; ++p) {
    const std::size_t nv = 1 + rng.below(3), nr = 1 + rng.below(3);
    for (std::size_t i = 0; i < nv + nr; ++i) {
      b.parts.push_back(random_nested(rng, parts, dim));
      b.ids.push_back(static_cast<int>(p) * 7 + 3);
      b.mods.push_back(i < nv ? Modality::visible : Modality::infrared);
    }
  }
  std::vector<PartDescriptorSet> sets;
  for (const auto& n : b.parts) sets.push_back(to_set(n));
  b.banks = make_bank_pair(sets, b.ids, b.mods);
  return b;
}

OracleSuiteResult run_suite(const std::string& name, std::size_t instances,
                            const std::function<void(Rng&)>& instance, const Rng& root) {
  const auto start = std::chrono::steady_clock::now();
  OracleSuiteResult r{name, 0, 0, {}, 0.0};
  for (std::size_t i = 0; i < instances; ++i) {
    Rng rng = root.split(name).split(static_cast<std::uint64_t>(i));
    ++r.instances;
    try {
      instance(rng);
    } catch (const Failure& f) {
      if (r.failures++ == 0) r.first_failure = "instance " + std::to_string(i) + ": " + f.what;
    } catch (const std::exception& e) {
      if (r.failures++ == 0) r.first_failure = "instance " + std::to_string(i) + ": exception " + e.what();
    }
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

// --- part_mix -------------------------------------------------------------

void part_mix_instance(Rng& rng) {
  const std::size_t parts = 1 + rng.below(8), dim = 1 + rng.below(6);
  const Nested a = random_nested(rng, parts, dim), d = random_nested(rng, parts, dim);
  const std::size_t steps = 1 + rng.below(parts);
  Nested expected = a;
  PartDescriptorSet got = to_set(a);
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t u = rng.below(parts), h = rng.below(parts);
    expected[u] = d[h];
    got = part_mix(got, u, to_set(d), h);
  }
  expect(to_nested(got) == expected, "part_mix differs from slot rewrite");
  expect(part_mix(to_set(a), 0, to_set(a), 0) == to_set(a), "self-mix is not the identity");
}

// --- provenance -----------------------------------------------------------

void provenance_instance(Rng& rng) {
  const std::size_t parts = 2 + rng.below(6), dim = 1 + rng.below(4);
  RandomBatch b = random_batch(rng, parts, dim);
  MixSpec spec;
  spec.mixed_parts = rng.below(parts + 1);
  spec.positive_cap = 1000;
  spec.negative_cap = 1000;
  const std::size_t anchor = rng.below(b.ids.size());
  const BankEntry& e = b.banks.entry(anchor);
  std::vector<MixedSample> samples;
  try {
    samples = gen_positive(e, b.banks, spec, rng.split("pos"));
  } catch (const EmptyPoolError&) {
  }
  const auto neg = gen_negative(e, b.banks, spec, rng.split("neg"));
  samples.insert(samples.end(), neg.begin(), neg.end());
  for (const auto& s : samples) {
    const auto& donor = b.banks.entry(s.donor_index);
    expect(replay_mix(e.parts, donor.parts, s.replaced_slots) == s.parts, "replay does not reproduce the sample");
    expect(s.anchor_index == anchor && s.anchor_identity == e.identity && s.donor_identity == donor.identity,
           "provenance identities disagree with the banks");
    expect(s.replaced_slots.size() == spec.mixed_parts, "wrong number of replaced slots");
    const bool same_id = s.donor_identity == s.anchor_identity;
    const bool matching = std::all_of(s.replaced_slots.begin(), s.replaced_slots.end(),
                                      [](const SlotPair& p) { return p.u == p.h; });
    const bool shifted = std::all_of(s.replaced_slots.begin(), s.replaced_slots.end(),
                                     [](const SlotPair& p) { return p.u != p.h; });
    if (s.role == Role::positive) expect(same_id && matching, "positive violates (same id, u = h)");
    else
      expect((same_id && shifted) || (!same_id && matching), "negative matches neither branch");
    // Naive check: untouched slots equal the anchor, replaced ones the donor.
    Nested expected = to_nested(e.parts);
    const Nested dn = to_nested(donor.parts);
    for (const auto& p : s.replaced_slots) expected[p.u] = dn[p.h];
    expect(to_nested(s.parts) == expected, "slot contents disagree with provenance");
  }
}

// --- pool enumeration -----------------------------------------------------

using PoolKey = std::tuple<std::size_t, int, int>;  // donor, route (0 inter, 1 intra), branch (0 matching, 1 shifted)

// Generation order: branch (shifted before matching for negatives), then route
// (inter before intra), then donors in batch order.
std::vector<PoolKey> brute_pool(const RandomBatch& b, std::size_t anchor, const MixSpec& spec, bool positive) {
  std::vector<PoolKey> out;
  const Modality am = b.mods[anchor];
  const std::vector<int> branches = positive ? std::vector<int>{0} : std::vector<int>{1, 0};
  for (int branch : branches)
    for (int route : {0, 1}) {
      if ((route == 0 && !spec.use_inter) || (route == 1 && !spec.use_intra)) continue;
      for (std::size_t j = 0; j < b.ids.size(); ++j) {
        if (j == anchor || (b.mods[j] == am) != (route == 1)) continue;
        const bool same = b.ids[j] == b.ids[anchor];
        if (positive && same) out.emplace_back(j, route, 0);
        if (!positive && branch == 1 && same && (spec.mixed_parts == 0 || b.parts[0].size() >= 2))
          out.emplace_back(j, route, 1);
        if (!positive && branch == 0 && !same) out.emplace_back(j, route, 0);
      }
    }
  return out;
}

std::vector<PoolKey> keys_of(const std::vector<MixedSample>& pool) {
  std::vector<PoolKey> out;
  for (const auto& s : pool) {
    const bool shifted = s.role == Role::negative && s.donor_identity == s.anchor_identity;
    out.emplace_back(s.donor_index, s.route == Route::inter ? 0 : 1, shifted ? 1 : 0);
  }
  return out;
}

void pool_instance(Rng& rng, bool positive) {
  const std::size_t parts = 2 + rng.below(6), dim = 1 + rng.below(3);
  RandomBatch b = random_batch(rng, parts, dim);
  MixSpec spec;
  spec.mixed_parts = rng.below(parts + 1);
  spec.use_inter = rng.below(4) != 0;
  spec.use_intra = !spec.use_inter || rng.below(3) != 0;
  const std::size_t anchor = rng.below(b.ids.size());
  const auto expected = brute_pool(b, anchor, spec, positive);
  auto generate = [&](std::size_t cap) {
    MixSpec s = spec;
    (positive ? s.positive_cap : s.negative_cap) = cap;
    const Rng g = rng.split("gen");
    return positive ? gen_positive(b.banks.entry(anchor), b.banks, s, g)
                    : gen_negative(b.banks.entry(anchor), b.banks, s, g);
  };
  if (positive && expected.empty()) {
    bool threw = false;
    try {
      generate(1000);
    } catch (const EmptyPoolError&) {
      threw = true;
    }
    expect(threw, "empty positive pool did not raise");
    return;
  }
  const auto full = generate(1000);
  expect(keys_of(full) == expected, "uncapped pool differs from ordered enumeration");
  for (const auto& smp : full) {
    std::set<std::size_t> us, hs;
    for (const auto& p : smp.replaced_slots) {
      us.insert(p.u);
      hs.insert(p.h);
    }
    expect(us.size() == spec.mixed_parts && hs.size() == spec.mixed_parts, "slots are not distinct");
  }
  if (full.empty()) return;
  const std::size_t cap = 1 + rng.below(full.size());
  const auto capped = keys_of(generate(cap));
  expect(capped.size() == cap, "capped pool has the wrong size");
  // Capping keeps a subsequence of the enumeration.
  std::size_t at = 0;
  for (const auto& k : expected)
    if (at < capped.size() && capped[at] == k) ++at;
  expect(at == capped.size(), "capped pool is not an ordered sub-pool");
}

// --- entropy and mining ---------------------------------------------------

double naive_entropy(const Vec& x, const Vec& w, const Vec& bias, std::size_t classes) {
  Vec z(classes);
  double zmax = -1e300;
  for (std::size_t c = 0; c < classes; ++c) {
    z[c] = bias[c];
    for (std::size_t i = 0; i < x.size(); ++i) z[c] += w[c * x.size() + i] * x[i];
    zmax = std::max(zmax, z[c]);
  }
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - zmax);
  double h = 0.0;
  for (double v : z) {
    const double p = std::exp(v - zmax) / sum;
    if (p > 0.0) h -= p * std::log(std::max(p, kProbabilityFloor));
  }
  return h;
}

void entropy_gap_instance(Rng& rng) {
  const std::size_t parts = 1 + rng.below(5), dim = 1 + rng.below(4), classes = 2 + rng.below(10);
  const std::size_t in = parts * dim;
  Vec w(classes * in), bias(classes);
  for (double& v : w) v = rng.normal();
  for (double& v : bias) v = rng.normal();
  const AffineView cp{w, bias, in, classes};
  const auto a = to_set(random_nested(rng, parts, dim));
  MixedSample cand;
  cand.parts = to_set(random_nested(rng, parts, dim));
  const double expected = std::abs(naive_entropy(a.values, w, bias, classes) - naive_entropy(cand.parts.values, w, bias, classes));
  expect(close(entropy_gap(a, cand, cp), expected), "entropy gap differs from re-evaluation");
  cand.parts = a;
  expect(entropy_gap(a, cand, cp) == 0.0, "gap to itself is not zero");
}

std::vector<std::size_t> brute_select(const std::vector<double>& gaps, std::size_t quota, bool ascending) {
  // rank(i) = #{j better than i} + #{j equal to i with j < i}
  std::vector<std::pair<std::size_t, std::size_t>> ranked;
  for (std::size_t i = 0; i < gaps.size(); ++i) {
    std::size_t rank = 0;
    for (std::size_t j = 0; j < gaps.size(); ++j) {
      const bool better = ascending ? gaps[j] < gaps[i] : gaps[j] > gaps[i];
      if (better || (gaps[j] == gaps[i] && j < i)) ++rank;
    }
    if (rank < quota) ranked.emplace_back(rank, i);
  }
  std::sort(ranked.begin(), ranked.end());
  std::vector<std::size_t> out;
  for (const auto& [r, i] : ranked) out.push_back(i);
  return out;
}

void select_instance(Rng& rng) {
  const std::size_t n = rng.below(201);
  const std::size_t levels = 1 + rng.below(12);  // few levels force duplicated gaps
  std::vector<double> gaps(n);
  std::vector<EntropyRecord> records;
  for (std::size_t i = 0; i < n; ++i) {
    gaps[i] = static_cast<double>(rng.below(levels)) * 0.125;
    records.push_back({i, gaps[i]});
  }
  const std::size_t quota = 1 + rng.below(30);
  for (bool asc : {true, false}) {
    std::vector<std::size_t> got;
    for (const auto& r : select_by_gap(records, quota, asc)) got.push_back(r.pool_position);
    expect(got == brute_select(gaps, quota, asc), "selection differs from rank oracle");
  }
}

void mine_instance(Rng& rng) {
  const std::size_t parts = 2 + rng.below(4), dim = 1 + rng.below(3), classes = 2 + rng.below(8);
  const std::size_t in = parts * dim;
  Vec w(classes * in), bias(classes);
  for (double& v : w) v = rng.normal();
  for (double& v : bias) v = rng.normal();
  const AffineView cp{w, bias, in, classes};
  const auto anchor = to_set(random_nested(rng, parts, dim));
  auto make_pool = [&](std::size_t n) {
    std::vector<MixedSample> pool(n);
    std::vector<PartDescriptorSet> distinct;
    for (std::size_t i = 0; i < 1 + n / 3; ++i) distinct.push_back(to_set(random_nested(rng, parts, dim)));
    for (auto& s : pool) {
      s.parts = distinct[rng.below(distinct.size())];  // repeated descriptors give exact ties
      s.donor_index = rng.below(1000);
    }
    return pool;
  };
  const auto pos = make_pool(rng.below(40)), neg = make_pool(rng.below(120));
  const std::size_t up = 1 + rng.below(5), qp = 1 + rng.below(25);
  const double ha = naive_entropy(anchor.values, w, bias, classes);
  auto gaps_of = [&](const std::vector<MixedSample>& pool) {
    std::vector<double> g;
    for (const auto& s : pool) g.push_back(std::abs(ha - naive_entropy(s.parts.values, w, bias, classes)));
    return g;
  };
  const MinedBanks banks = mine(anchor, pos, neg, up, qp, cp);
  auto check = [&](const std::vector<MixedSample>& pool, const std::vector<MixedSample>& got, std::size_t quota,
                   bool asc) {
    const auto idx = brute_select(gaps_of(pool), quota, asc);
    expect(got.size() == idx.size(), "mined bank has the wrong size");
    for (std::size_t i = 0; i < idx.size(); ++i)
      expect(got[i].parts == pool[idx[i]].parts && got[i].donor_index == pool[idx[i]].donor_index,
             "mined bank differs from oracle selection");
  };
  check(pos, banks.positives, up, true);
  check(neg, banks.negatives, qp, false);
  // Permuting the pool keeps the multiset of selected gaps.
  auto perm = neg;
  rng.shuffle(perm);
  const MinedBanks pb = mine(anchor, pos, perm, up, qp, cp);
  std::multiset<double> g1, g2;
  for (const auto& s : banks.negatives) g1.insert(std::abs(ha - naive_entropy(s.parts.values, w, bias, classes)));
  for (const auto& s : pb.negatives) g2.insert(std::abs(ha - naive_entropy(s.parts.values, w, bias, classes)));
  expect(g1 == g2, "pool permutation changed the selected gap multiset");
}

// --- masked pooling -------------------------------------------------------

void pooling_instance(Rng& rng) {
  const std::size_t s = 1 + rng.below(60), c = 1 + rng.below(8), m = 1 + rng.below(7);
  FeatureMap f(s, c);
  for (double& v : f.values) v = rng.normal();
  PartMaps maps{s, m, Vec(s * m)};
  for (double& v : maps.values) v = rng.uniform();
  const auto got = pool_parts(f, maps);
  const auto g = global_pool(f);
  for (std::size_t k = 0; k < m; ++k)
    for (std::size_t ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (std::size_t pos = 0; pos < s; ++pos) acc += maps.values[pos * m + k] * f.values[pos * c + ch];
      expect(close(got.part(k)[ch], acc / static_cast<double>(s)), "masked pooling differs from triple loop");
    }
  for (std::size_t ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (std::size_t pos = 0; pos < s; ++pos) acc += f.values[pos * c + ch];
    expect(close(g[ch], acc / static_cast<double>(s)), "global pooling differs from loop");
  }
}

// --- ranking, CMC, mAP ----------------------------------------------------

double naive_cos(const Vec& a, const Vec& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

void retrieval_instance(Rng& rng) {
  const std::size_t nq = 1 + rng.below(10), ng = 1 + rng.below(50), dim = 1 + rng.below(5);
  const int classes = 1 + static_cast<int>(rng.below(6));
  std::vector<Vec> gallery;
  std::vector<int> gl;
  for (std::size_t j = 0; j < ng; ++j) {
    if (j > 0 && rng.below(4) == 0) {
      gallery.push_back(gallery[rng.below(j)]);  // exact duplicates exercise the tie-break
    } else {
      Vec v(dim);
      for (double& x : v) x = static_cast<double>(rng.below(5)) - 1.5;
      gallery.push_back(v);
    }
    gl.push_back(static_cast<int>(rng.below(static_cast<std::size_t>(classes))));
  }
  std::vector<Vec> queries;
  std::vector<int> ql;
  for (std::size_t q = 0; q < nq; ++q) {
    Vec v(dim);
    for (double& x : v) x = rng.normal();
    queries.push_back(v);
    ql.push_back(gl[rng.below(ng)]);  // guarantees at least one true match
  }
  const std::vector<std::size_t> ks{1, 2, 3, 5, 10, 20, 60};
  std::vector<MatchFlags> flags;
  double map_sum = 0.0;
  std::map<std::size_t, double> cmc_expected;
  for (std::size_t q = 0; q < nq; ++q) {
    Vec sims;
    for (const auto& g : gallery) sims.push_back(naive_cos(queries[q], g));
    std::vector<std::size_t> expected(ng);
    for (std::size_t j = 0; j < ng; ++j) {
      std::size_t pos = 0;
      for (std::size_t i = 0; i < ng; ++i)
        if (sims[i] > sims[j] || (sims[i] == sims[j] && i < j)) ++pos;
      expected[pos] = j;
    }
    const auto got = rank_gallery(queries[q], gallery);
    expect(got == expected, "ranking differs from pairwise-count oracle");
    flags.push_back(match_flags(got, ql[q], gl));
    std::size_t first = ng;
    double ap = 0.0, hits = 0.0;
    for (std::size_t r = 0; r < ng; ++r)
      if (gl[expected[r]] == ql[q]) {
        first = std::min(first, r);
        hits += 1.0;
        double upto = 0.0;
        for (std::size_t t = 0; t <= r; ++t) upto += gl[expected[t]] == ql[q] ? 1.0 : 0.0;
        ap += upto / static_cast<double>(r + 1);
      }
    map_sum += ap / hits;
    for (std::size_t k : ks) cmc_expected[k] += first < k ? 1.0 / static_cast<double>(nq) : 0.0;
  }
  const auto got_cmc = cmc(flags, ks);
  for (std::size_t k : ks) expect(close(got_cmc.at(k), cmc_expected[k]), "CMC differs from brute force");
  expect(close(mean_average_precision(flags), map_sum / static_cast<double>(nq)), "mAP differs from brute force");
  const auto rep = evaluate_retrieval(queries, ql, gallery, gl, RetrievalProtocol{"oracle", Modality::visible,
                                      Modality::infrared, ShotMode::multi, {1, 5}}, 0);
  expect(close(rep.map_score, map_sum / static_cast<double>(nq)), "evaluate_retrieval mAP differs");
}

}  // namespace

OracleReport run_oracles(std::size_t instances, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  const Rng root = Rng(seed).split("oracle");
  OracleReport report;
  report.suites.push_back(run_suite("part_mix", instances, part_mix_instance, root));
  // Each round-trip instance checks every sample in one anchor's pools.
  report.suites.push_back(
      run_suite("provenance_round_trip", std::max<std::size_t>(instances, 1000), provenance_instance, root));
  report.suites.push_back(run_suite("positive_pool", instances, [](Rng& r) { pool_instance(r, true); }, root));
  report.suites.push_back(run_suite("negative_pool", instances, [](Rng& r) { pool_instance(r, false); }, root));
  report.suites.push_back(run_suite("entropy_gap", instances, entropy_gap_instance, root));
  report.suites.push_back(run_suite("gap_selection", instances, select_instance, root));
  report.suites.push_back(run_suite("mine", instances, mine_instance, root));
  report.suites.push_back(run_suite("masked_pooling", instances, pooling_instance, root));
  report.suites.push_back(run_suite("rank_cmc_map", instances, retrieval_instance, root));
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace partmix
