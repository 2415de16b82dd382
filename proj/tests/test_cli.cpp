#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

#include "partmix/config.hpp"
#include "tiny_config.hpp"

using namespace partmix;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "partmix_cli_test";

int run(const std::string& args) {
  const std::string cmd = std::string(PARTMIX_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write_json(const std::string& name, const nlohmann::json& j) {
  fs::create_directories(kRoot);
  const auto p = kRoot / name;
  std::ofstream(p) << j.dump(2);
  return p;
}

fs::path tiny_file(Regularizer r = Regularizer::partmix) {
  auto j = to_json(testing::tiny_config(r));
  j["experiments"]["seeds"] = {0, 1};
  j["experiments"]["regularizers"] = {"none"};
  j["experiments"]["gradcheck_trials"] = 1;
  j["experiments"]["oracle_instances"] = 5;
  return write_json(std::string("tiny_") + std::string(to_string(r)) + ".json", j);
}

}  // namespace

TEST_CASE("train writes every artifact and is reproducible") {
  const auto cfg = tiny_file().string();
  const auto a = kRoot / "train_a", b = kRoot / "train_b";
  REQUIRE(run("train --config " + cfg + " --out " + a.string() + " --dump-mixes") == 0);
  REQUIRE(run("train --config " + cfg + " --out " + b.string()) == 0);
  for (const char* f : {"config.resolved.json", "losses.csv", "metrics.csv", "metrics.json", "params.bin", "run.json"})
    CHECK(fs::exists(a / f));
  CHECK(fs::exists(a / "mixes.json"));
  for (const char* f : {"losses.csv", "metrics.csv", "params.bin"}) CHECK(read_file(a / f) == read_file(b / f));

  // The resolved config reloads to the same run.
  const auto c = kRoot / "train_c";
  REQUIRE(run("train --config " + (a / "config.resolved.json").string() + " --out " + c.string()) == 0);
  CHECK(read_file(a / "params.bin") == read_file(c / "params.bin"));
}

TEST_CASE("eval of a snapshot is reproducible") {
  const auto cfg = tiny_file().string();
  const auto t = kRoot / "eval_train";
  REQUIRE(run("train --config " + cfg + " --out " + t.string()) == 0);
  const auto e1 = kRoot / "eval_1", e2 = kRoot / "eval_2";
  const auto params = (t / "params.bin").string();
  REQUIRE(run("eval --config " + cfg + " --params " + params + " --out " + e1.string()) == 0);
  REQUIRE(run("eval --config " + cfg + " --params " + params + " --out " + e2.string()) == 0);
  CHECK(read_file(e1 / "metrics.csv") == read_file(e2 / "metrics.csv"));
  CHECK(read_file(e1 / "metrics.csv").find("self_retrieval") != std::string::npos);
}

TEST_CASE("eval rejects a snapshot with mismatched dimensions") {
  const auto t = kRoot / "dim_train";
  REQUIRE(run("train --config " + tiny_file().string() + " --out " + t.string()) == 0);
  auto j = to_json(testing::tiny_config());
  j["model"]["feature_dim"] = 5;
  const auto other = write_json("dim.json", j).string();
  CHECK(run("eval --config " + other + " --params " + (t / "params.bin").string() + " --out " + (kRoot / "dim_eval").string()) == 1);
}

TEST_CASE("compare and ablate succeed") {
  const auto cfg = tiny_file().string();
  REQUIRE(run("compare --config " + cfg + " --out " + (kRoot / "cmp").string()) == 0);
  CHECK(fs::exists(kRoot / "cmp" / "comparison.csv"));
  auto j = to_json(testing::tiny_config());
  j["experiments"]["sweep"] = {{"parameter", "B"}, {"values", {0, 2}}};
  REQUIRE(run("ablate --config " + write_json("abl.json", j).string() + " --out " + (kRoot / "abl").string()) == 0);
  const auto text = read_file(kRoot / "abl" / "ablation.csv");
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 2 * 4);
}

TEST_CASE("check commands") {
  const auto cfg = tiny_file().string();
  CHECK(run("gradcheck --config " + cfg + " --trials 0 --out " + (kRoot / "gc0").string()) == 0);
  CHECK(run("oracle --config " + cfg + " --trials 5 --out " + (kRoot / "or").string()) == 0);
  CHECK(fs::exists(kRoot / "or" / "oracle.json"));
}

TEST_CASE("validation failures exit with 1") {
  CHECK(run("train --config " + (kRoot / "missing.json").string() + " --out " + (kRoot / "x").string()) == 1);
  CHECK(run("train --config " + write_json("unknown.json", {{"version", 1}, {"colour", 1}}).string() + " --out " +
            (kRoot / "x").string()) == 1);
  CHECK(run("train --config " + write_json("badreg.json", {{"version", 1}, {"regularizer", "dropout"}}).string() +
            " --out " + (kRoot / "x").string()) == 1);
  CHECK(run("frobnicate") == 1);
  CHECK(run("") == 1);
}

TEST_CASE("numeric failures exit with 2") {
  auto j = to_json(testing::tiny_config(Regularizer::none));
  j["optimizer"]["lr"] = 1e300;
  CHECK(run("train --config " + write_json("blowup.json", j).string() + " --out " + (kRoot / "blow").string()) == 2);
}
