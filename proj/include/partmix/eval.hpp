#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "partmix/dataset.hpp"
#include "partmix/encoder.hpp"

namespace partmix {

enum class ShotMode { single, multi };
std::string_view to_string(ShotMode s);

struct RetrievalProtocol {
  std::string name;
  Modality query_modality = Modality::visible;
  Modality gallery_modality = Modality::infrared;
  ShotMode shot_mode = ShotMode::multi;
  std::vector<std::size_t> ranks{1, 5, 10, 20};

  void validate() const;
};

/// visible->infrared and infrared->visible, each single- and multi-shot.
std::vector<RetrievalProtocol> default_protocols(std::vector<std::size_t> ranks = {1, 5, 10, 20});

struct MetricsReport {
  RetrievalProtocol protocol;
  std::map<std::size_t, double> cmc;
  double map_score = 0.0;
  std::size_t num_queries = 0;
  std::size_t gallery_size = 0;
  std::uint64_t seed = 0;
};

/// One flag per ranked gallery position: 1 where the item is a true match.
using MatchFlags = std::vector<std::uint8_t>;

/// Gallery indices by descending cosine similarity; ties by ascending index.
std::vector<std::size_t> rank_gallery(std::span<const double> query, std::span<const std::vector<double>> gallery);

/// All queries against one gallery. OpenMP over queries; the serial form is the reference.
std::vector<std::vector<std::size_t>> rank_all(std::span<const std::vector<double>> queries,
                                               std::span<const std::vector<double>> gallery);
std::vector<std::vector<std::size_t>> rank_all_serial(std::span<const std::vector<double>> queries,
                                                      std::span<const std::vector<double>> gallery);

MatchFlags match_flags(std::span<const std::size_t> ranking, int query_label, std::span<const int> gallery_labels);

/// CMC@k: fraction of queries whose first true match is at rank <= k.
std::map<std::size_t, double> cmc(std::span<const MatchFlags> flags, std::span<const std::size_t> ks);
/// Mean over true-match positions r of (#matches at ranks <= r) / r.
double average_precision(const MatchFlags& flags);
double mean_average_precision(std::span<const MatchFlags> flags);

/// Scores precomputed descriptors under `protocol` (labels only decide matches).
MetricsReport evaluate_retrieval(std::span<const std::vector<double>> query, std::span<const int> query_labels,
                                 std::span<const std::vector<double>> gallery, std::span<const int> gallery_labels,
                                 const RetrievalProtocol& protocol, std::uint64_t seed);

/// Queries: every test image of the query modality. Gallery: all test images
/// of the gallery modality (multi-shot) or one seeded pick per identity (single-shot).
MetricsReport run_protocol(const Model& model, const DatasetSplit& split, const RetrievalProtocol& protocol,
                           std::uint64_t seed);

/// Sanity protocol: the gallery is the query set itself and only the query's
/// own entry counts as a match.
MetricsReport run_self_retrieval(const Model& model, std::span<const PersonImage> images,
                                 std::vector<std::size_t> ranks = {1, 5, 10});

struct ChanceBand {
  double lower = 0.0;
  double upper = 0.0;
  double mean = 0.0;
  std::size_t permutations = 0;
};

/// mAP under random relabelings of the gallery, keeping each query's ranking.
/// Band is the [lower_q, upper_q] quantile interval of the permuted mAPs.
ChanceBand permutation_chance_band(std::span<const std::vector<std::size_t>> rankings,
                                   std::span<const int> query_labels, std::span<const int> gallery_labels,
                                   std::size_t permutations, std::uint64_t seed, double lower_q = 0.005,
                                   double upper_q = 0.995);

void write_metrics_csv(std::span<const MetricsReport> reports, const std::filesystem::path& file);
nlohmann::json metrics_to_json(std::span<const MetricsReport> reports);
void write_metrics_json(std::span<const MetricsReport> reports, const std::filesystem::path& file);

/// Shortest round-trip decimal form, used by every CSV writer.
std::string format_double(double v);

}  // namespace partmix
