#include "partmix/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>

#include "partmix/errors.hpp"
#include "partmix/numerics.hpp"
#include "partmix/rng.hpp"

namespace partmix {

std::string_view to_string(ShotMode s) { return s == ShotMode::single ? "single" : "multi"; }

void RetrievalProtocol::validate() const {
  if (query_modality == gallery_modality) throw ValidationError("protocol: query and gallery modality must differ");
  if (ranks.empty() || !std::is_sorted(ranks.begin(), ranks.end()) || ranks.front() < 1)
    throw ValidationError("protocol: ranks must be ascending and >= 1");
}

std::vector<RetrievalProtocol> default_protocols(std::vector<std::size_t> ranks) {
  std::vector<RetrievalProtocol> out;
  for (auto [q, name] : {std::pair{Modality::visible, "visible_to_infrared"}, std::pair{Modality::infrared, "infrared_to_visible"}})
    for (ShotMode s : {ShotMode::multi, ShotMode::single}) out.push_back({name, q, other(q), s, ranks});
  return out;
}

std::vector<std::size_t> rank_gallery(std::span<const double> query, std::span<const std::vector<double>> gallery) {
  if (gallery.empty()) throw ProtocolError("rank_gallery: empty gallery");
  std::vector<double> score(gallery.size());
  for (std::size_t i = 0; i < gallery.size(); ++i) score[i] = cosine_similarity(query, gallery[i]);
  std::vector<std::size_t> order(gallery.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  return order;
}

std::vector<std::vector<std::size_t>> rank_all_serial(std::span<const std::vector<double>> queries,
                                                      std::span<const std::vector<double>> gallery) {
  std::vector<std::vector<std::size_t>> out(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) out[q] = rank_gallery(queries[q], gallery);
  return out;
}

std::vector<std::vector<std::size_t>> rank_all(std::span<const std::vector<double>> queries,
                                               std::span<const std::vector<double>> gallery) {
  if (gallery.empty()) throw ProtocolError("rank_all: empty gallery");
  std::vector<std::vector<std::size_t>> out(queries.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t q = 0; q < static_cast<std::ptrdiff_t>(queries.size()); ++q)
    out[static_cast<std::size_t>(q)] = rank_gallery(queries[static_cast<std::size_t>(q)], gallery);
  return out;
}

MatchFlags match_flags(std::span<const std::size_t> ranking, int query_label, std::span<const int> gallery_labels) {
  MatchFlags f(ranking.size());
  for (std::size_t r = 0; r < ranking.size(); ++r) f[r] = gallery_labels[ranking[r]] == query_label ? 1 : 0;
  return f;
}

namespace {

std::size_t first_match(const MatchFlags& f) {
  const auto it = std::find(f.begin(), f.end(), std::uint8_t{1});
  if (it == f.end()) throw ProtocolError("query has no true match in the gallery");
  return static_cast<std::size_t>(it - f.begin());
}

}  // namespace

std::map<std::size_t, double> cmc(std::span<const MatchFlags> flags, std::span<const std::size_t> ks) {
  if (flags.empty()) throw ProtocolError("cmc: no queries");
  std::vector<std::size_t> first(flags.size());
  for (std::size_t q = 0; q < flags.size(); ++q) first[q] = first_match(flags[q]);
  std::map<std::size_t, double> out;
  for (std::size_t k : ks) {
    std::size_t hits = 0;
    for (std::size_t r : first) hits += r < k ? 1 : 0;
    out[k] = static_cast<double>(hits) / static_cast<double>(flags.size());
  }
  return out;
}

double average_precision(const MatchFlags& flags) {
  first_match(flags);
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < flags.size(); ++r)
    if (flags[r]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  return sum / static_cast<double>(hits);
}

double mean_average_precision(std::span<const MatchFlags> flags) {
  if (flags.empty()) throw ProtocolError("mAP: no queries");
  double s = 0.0;
  for (const auto& f : flags) s += average_precision(f);
  return s / static_cast<double>(flags.size());
}

MetricsReport evaluate_retrieval(std::span<const std::vector<double>> query, std::span<const int> query_labels,
                                 std::span<const std::vector<double>> gallery, std::span<const int> gallery_labels,
                                 const RetrievalProtocol& protocol, std::uint64_t seed) {
  if (query.empty() || gallery.empty()) throw ProtocolError("retrieval: empty query or gallery");
  if (query.size() != query_labels.size() || gallery.size() != gallery_labels.size())
    throw ShapeError("retrieval: label count mismatch");
  const auto rankings = rank_all(query, gallery);
  std::vector<MatchFlags> flags(rankings.size());
  for (std::size_t q = 0; q < rankings.size(); ++q) flags[q] = match_flags(rankings[q], query_labels[q], gallery_labels);
  MetricsReport r;
  r.protocol = protocol;
  r.cmc = cmc(flags, protocol.ranks);
  r.map_score = mean_average_precision(flags);
  r.num_queries = query.size();
  r.gallery_size = gallery.size();
  r.seed = seed;
  return r;
}

MetricsReport run_protocol(const Model& model, const DatasetSplit& split, const RetrievalProtocol& protocol,
                           std::uint64_t seed) {
  protocol.validate();
  std::vector<PersonImage> queries, candidates;
  for (const auto* im : split.test_images()) {
    if (im->modality == protocol.query_modality) queries.push_back(*im);
    if (im->modality == protocol.gallery_modality) candidates.push_back(*im);
  }
  std::vector<PersonImage> gallery;
  if (protocol.shot_mode == ShotMode::multi) {
    gallery = std::move(candidates);
  } else {
    std::map<int, std::vector<std::size_t>> by_id;
    for (std::size_t i = 0; i < candidates.size(); ++i) by_id[candidates[i].identity].push_back(i);
    Rng rng = Rng(seed).split("single_shot").split(protocol.name);
    for (const auto& [id, idx] : by_id) gallery.push_back(candidates[idx[rng.below(idx.size())]]);
  }
  if (queries.empty() || gallery.empty()) throw ProtocolError("protocol " + protocol.name + ": empty query or gallery");

  auto vectors = [&](const std::vector<PersonImage>& ims) {
    std::vector<std::vector<double>> v;
    for (auto& d : describe(model, ims)) v.push_back(std::move(d.concatenated));
    return v;
  };
  auto labels = [](const std::vector<PersonImage>& ims) {
    std::vector<int> l;
    for (const auto& im : ims) l.push_back(im.identity);
    return l;
  };
  return evaluate_retrieval(vectors(queries), labels(queries), vectors(gallery), labels(gallery), protocol, seed);
}

MetricsReport run_self_retrieval(const Model& model, std::span<const PersonImage> images, std::vector<std::size_t> ranks) {
  std::vector<std::vector<double>> v;
  for (auto& d : describe(model, images)) v.push_back(std::move(d.concatenated));
  std::vector<int> self(images.size());
  std::iota(self.begin(), self.end(), 0);
  RetrievalProtocol p{"self_retrieval", images.empty() ? Modality::visible : images[0].modality,
                      images.empty() ? Modality::visible : images[0].modality, ShotMode::multi, std::move(ranks)};
  return evaluate_retrieval(v, self, v, self, p, 0);
}

ChanceBand permutation_chance_band(std::span<const std::vector<std::size_t>> rankings,
                                   std::span<const int> query_labels, std::span<const int> gallery_labels,
                                   std::size_t permutations, std::uint64_t seed, double lower_q, double upper_q) {
  if (permutations == 0) throw ValidationError("chance band: need at least one permutation");
  Rng rng = Rng(seed).split("chance_band");
  std::vector<double> maps;
  std::vector<int> permuted(gallery_labels.begin(), gallery_labels.end());
  std::vector<MatchFlags> flags(rankings.size());
  for (std::size_t t = 0; t < permutations; ++t) {
    rng.shuffle(permuted);
    for (std::size_t q = 0; q < rankings.size(); ++q) flags[q] = match_flags(rankings[q], query_labels[q], permuted);
    maps.push_back(mean_average_precision(flags));
  }
  std::sort(maps.begin(), maps.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(maps.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, maps.size() - 1);
    return maps[lo] + (pos - static_cast<double>(lo)) * (maps[hi] - maps[lo]);
  };
  ChanceBand band;
  band.lower = quantile(lower_q);
  band.upper = quantile(upper_q);
  band.mean = std::accumulate(maps.begin(), maps.end(), 0.0) / static_cast<double>(maps.size());
  band.permutations = permutations;
  return band;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_metrics_csv(std::span<const MetricsReport> reports, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw ValidationError("cannot open " + file.string() + " for writing");
  out << "protocol,shot_mode,k,cmc\n";
  for (const auto& r : reports) {
    const std::string prefix = r.protocol.name + "," + std::string(to_string(r.protocol.shot_mode)) + ",";
    for (const auto& [k, v] : r.cmc) out << prefix << k << ',' << format_double(v) << '\n';
    out << prefix << "mAP," << format_double(r.map_score) << '\n';
  }
}

nlohmann::json metrics_to_json(std::span<const MetricsReport> reports) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : reports) {
    nlohmann::json cmc_json = nlohmann::json::object();
    for (const auto& [k, v] : r.cmc) cmc_json[std::to_string(k)] = v;
    arr.push_back({{"protocol", r.protocol.name},
                   {"query_modality", std::string(to_string(r.protocol.query_modality))},
                   {"gallery_modality", std::string(to_string(r.protocol.gallery_modality))},
                   {"shot_mode", std::string(to_string(r.protocol.shot_mode))},
                   {"cmc", cmc_json},
                   {"mAP", r.map_score},
                   {"num_queries", r.num_queries},
                   {"gallery_size", r.gallery_size},
                   {"seed", r.seed}});
  }
  return arr;
}

void write_metrics_json(std::span<const MetricsReport> reports, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw ValidationError("cannot open " + file.string() + " for writing");
  out << metrics_to_json(reports).dump(2) << '\n';
}

}  // namespace partmix
