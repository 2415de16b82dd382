#include <doctest.h>

#include <algorithm>

#include "partmix/gradcheck.hpp"
#include "tiny_config.hpp"

using namespace partmix;

TEST_CASE("an injected gradient bug is reported with the op name") {
  GradOp op;
  op.name = "scaled_square";
  op.point = {0.5, -1.25, 2.0};
  op.value = [](std::span<const double> x) { return x[0] * x[0] + x[1] * x[1] + x[2] * x[2]; };
  op.gradient = [](std::span<const double> x) { return std::vector<double>{2.1 * x[0], 2.1 * x[1], 2.1 * x[2]}; };
  const auto bad = check_op(op, 0);
  CHECK_FALSE(bad.passed);
  CHECK(bad.op == "scaled_square");
  CHECK(bad.max_relative_error > 1e-2);
  GradcheckReport report;
  report.entries.push_back(bad);
  CHECK_FALSE(report.passed());
  CHECK(report.failed_ops() == std::vector<std::string>{"scaled_square"});

  op.gradient = [](std::span<const double> x) { return std::vector<double>{2 * x[0], 2 * x[1], 2 * x[2]}; };
  CHECK(check_op(op, 0).passed);
}

TEST_CASE("zero trials give an empty passing report") {
  const auto r = run_gradcheck(ExperimentConfig{}, 0, 0);
  CHECK(r.entries.empty());
  CHECK(r.passed());
}

TEST_CASE("one trial covers every op and passes") {
  const auto ops = gradcheck_ops(ExperimentConfig{}, 0, 1);
  std::vector<std::string> names;
  for (const auto& op : ops) names.push_back(op.name);
  for (const char* want : {"embed", "detect_parts", "pool_parts", "contrastive_loss", "part_id_loss", "id_loss",
                           "modality_specific_id_loss", "modality_learning_loss", "center_cluster_loss",
                           "soft_label_id_loss", "total_loss", "objective_partmix", "objective_cutmix"})
    CHECK(std::find(names.begin(), names.end(), want) != names.end());
  const auto r = run_gradcheck(ExperimentConfig{}, 1, 1);
  CHECK(r.entries.size() == ops.size());
  CHECK(r.passed());
}
