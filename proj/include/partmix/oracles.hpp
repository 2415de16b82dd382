#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace partmix {

struct OracleSuiteResult {
  std::string suite;
  std::size_t instances = 0;
  std::size_t failures = 0;
  std::string first_failure;
  double seconds = 0.0;

  bool passed() const { return failures == 0 && instances > 0; }
};

struct OracleReport {
  std::vector<OracleSuiteResult> suites;
  double seconds = 0.0;

  bool passed() const;
  nlohmann::json to_json() const;
};

/// Tolerance for real-valued comparisons against the brute-force references.
inline constexpr double kOracleTolerance = 1e-12;

/// Brute-force equivalence suites on seeded random instances:
/// part_mix, provenance round-trip, positive and negative pool enumeration,
/// entropy gap, mining selection, masked pooling, ranking, CMC and mAP.
OracleReport run_oracles(std::size_t instances, std::uint64_t seed);

}  // namespace partmix
