#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "partmix/config.hpp"
#include "partmix/errors.hpp"
#include "partmix/trainer.hpp"

using namespace partmix;
using nlohmann::json;

namespace {

std::string error_path(const json& j) {
  try {
    config_from_json(j);
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "";
}

}  // namespace

TEST_CASE("defaults") {
  const ExperimentConfig c;
  CHECK(c.schedule.warmup_epochs == 5);
  CHECK(c.schedule.total_epochs == 40);
  CHECK(c.objective.mix.mixed_parts == 2);
  CHECK(c.objective.positive_quota == 2);
  CHECK(c.objective.negative_quota == 20);
  CHECK(c.objective.weights.sid == 0.5);
  CHECK(c.objective.weights.ml == 2.5);
  CHECK(c.objective.weights.aid == 0.5);
  CHECK(c.objective.weights.cont == 0.5);
  CHECK(c.parts == 6);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("json round-trip keeps the hash") {
  ExperimentConfig c;
  c.seed = 9;
  c.objective.regularizer = Regularizer::cutmix;
  c.optimizer.decay_epochs = {3, 7};
  c.experiments.sweep.parameter = "tau";
  c.experiments.sweep.values = {0.05, 0.1};
  const auto j = to_json(c);
  const auto back = config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(config_hash(back) == config_hash(c));
  CHECK(config_from_json(json::parse(j.dump(2))).seed == 9);
  ExperimentConfig d = c;
  d.seed = 10;
  CHECK(config_hash(d) != config_hash(c));
  CHECK(hex64(0xabcULL) == "0000000000000abc");
}

TEST_CASE("unknown keys are rejected with their path") {
  CHECK(error_path(json{{"version", 1}, {"colour", 3}}) == "colour");
  CHECK(error_path(json{{"version", 1}, {"mix", {{"mixed_parts", 2}, {"X", 1}}}}) == "mix.X");
  CHECK(error_path(json{{"version", 1}, {"dataset", {{"num_train_idz", 3}}}}) == "dataset.num_train_idz");
}

TEST_CASE("version is required and checked") {
  CHECK(error_path(json::object()) == "version");
  CHECK(error_path(json{{"version", 2}}) == "version");
}

TEST_CASE("wrong types and invariants report their field") {
  CHECK(error_path(json{{"version", 1}, {"seed", "x"}}) == "seed");
  CHECK(error_path(json{{"version", 1}, {"regularizer", "dropout"}}) == "regularizer");
  CHECK(error_path(json{{"version", 1}, {"schedule", {{"warmup_epochs", 50}}}}) == "schedule.warmup_epochs");
  CHECK(error_path(json{{"version", 1}, {"mix", {{"mixed_parts", 7}}}}) == "mix.mixed_parts");
  CHECK(error_path(json{{"version", 1}, {"losses", {{"sid", -0.5}}}}) == "losses.sid");
}

TEST_CASE("load_config reads files") {
  const auto file = std::filesystem::temp_directory_path() / "partmix_cfg.json";
  {
    std::ofstream out(file);
    out << R"({"version": 1, "seed": 4, "regularizer": "mixup"})";
  }
  const auto c = load_config(file);
  CHECK(c.seed == 4);
  CHECK(c.objective.regularizer == Regularizer::mixup);
  {
    std::ofstream out(file);
    out << "{not json";
  }
  CHECK_THROWS(load_config(file));
  std::filesystem::remove(file);
}

TEST_CASE("learning rate schedule decays exactly") {
  OptimizerConfig o;
  o.lr = 0.01;
  o.decay_epochs = {25, 35};
  o.decay_factor = 0.1;
  CHECK(learning_rate(o, 0) == 0.01);
  CHECK(learning_rate(o, 24) == 0.01);
  CHECK(learning_rate(o, 25) == learning_rate(o, 24) * 0.1);
  CHECK(learning_rate(o, 34) == learning_rate(o, 25));
  CHECK(learning_rate(o, 35) == learning_rate(o, 34) * 0.1);
  CHECK(learning_rate(o, 39) == learning_rate(o, 35));
}
