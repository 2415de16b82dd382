#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "partmix/config.hpp"

namespace partmix {

/// A scalar function of a flat parameter vector together with the library's
/// analytic gradient for it, evaluated at `point`.
struct GradOp {
  std::string name;
  std::vector<double> point;
  std::function<double(std::span<const double>)> value;
  std::function<std::vector<double>(std::span<const double>)> gradient;
  std::vector<std::size_t> coordinates;  // empty: every coordinate
};

struct GradcheckEntry {
  std::string op;
  std::size_t trial = 0;
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t coordinates_checked = 0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double seconds = 0.0;

  bool passed() const;
  std::vector<std::string> failed_ops() const;
  nlohmann::json to_json() const;
};

inline constexpr double kGradcheckStep = 1e-5;
inline constexpr double kGradcheckTolerance = 1e-4;

GradcheckEntry check_op(const GradOp& op, std::size_t trial, double step = kGradcheckStep,
                        double tolerance = kGradcheckTolerance);

/// Every differentiable operation plus the total objective under each
/// regularizer family, at a random state drawn for `trial`.
std::vector<GradOp> gradcheck_ops(const ExperimentConfig& cfg, std::size_t trial, std::uint64_t seed);

GradcheckReport run_gradcheck(const ExperimentConfig& cfg, std::size_t trials, std::uint64_t seed);

}  // namespace partmix
