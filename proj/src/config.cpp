#include "partmix/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "partmix/errors.hpp"

namespace partmix {

namespace {

using nlohmann::json;

class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }
  const json& at(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  template <class T>
  void read(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(field(key), std::string("wrong type: ") + e.what());
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(field(it.key()), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

ModelDims ExperimentConfig::model_dims() const {
  return {dataset.channels, feature_dim, parts, dataset.num_train_ids};
}

void ExperimentConfig::validate() const {
  if (version != kConfigVersion) throw ConfigError("version", "unsupported config version " + std::to_string(version));
  try {
    dataset.validate();
  } catch (const ValidationError& e) {
    throw ConfigError("dataset", e.what());
  }
  if (feature_dim < 1) throw ConfigError("model.feature_dim", "must be >= 1");
  if (parts < 1) throw ConfigError("model.parts", "must be >= 1");
  const auto& o = objective;
  if (o.mix.mixed_parts > parts) throw ConfigError("mix.mixed_parts", "B must not exceed M");
  if (o.mix.positive_cap < 1) throw ConfigError("mix.positive_cap", "must be >= 1");
  if (o.mix.negative_cap < 1) throw ConfigError("mix.negative_cap", "must be >= 1");
  if (o.positive_quota < 1) throw ConfigError("mining.positive_quota", "must be >= 1");
  if (o.negative_quota < 1) throw ConfigError("mining.negative_quota", "must be >= 1");
  if (!(o.tau > 0.0)) throw ConfigError("losses.tau", "must be > 0");
  if (!(o.rho >= 0.0)) throw ConfigError("losses.rho", "must be >= 0");
  for (auto [name, v] : {std::pair{"sid", o.weights.sid}, std::pair{"ml", o.weights.ml},
                         std::pair{"aid", o.weights.aid}, std::pair{"cont", o.weights.cont},
                         std::pair{"mix_weight", o.mix_weight}})
    if (!(v >= 0.0)) throw ConfigError(std::string("losses.") + name, "weights must be >= 0");
  if (!(o.mix_alpha > 0.0)) throw ConfigError("losses.mix_alpha", "must be > 0");
  if (!(ema_momentum >= 0.0 && ema_momentum <= 1.0)) throw ConfigError("losses.ema_momentum", "must be in [0, 1]");
  if (!(optimizer.lr > 0.0)) throw ConfigError("optimizer.lr", "must be > 0");
  if (!(optimizer.decay_factor > 0.0)) throw ConfigError("optimizer.decay_factor", "must be > 0");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0)) throw ConfigError("optimizer.beta1", "must be in [0, 1)");
  if (!(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) throw ConfigError("optimizer.beta2", "must be in [0, 1)");
  if (!(optimizer.eps > 0.0)) throw ConfigError("optimizer.eps", "must be > 0");
  if (schedule.warmup_epochs > schedule.total_epochs)
    throw ConfigError("schedule.warmup_epochs", "must not exceed total_epochs");
  if (schedule.batches_per_epoch < 1) throw ConfigError("schedule.batches_per_epoch", "must be >= 1");
  if (batch.identities < 2) throw ConfigError("batch.identities", "must be >= 2");
  if (batch.identities > dataset.num_train_ids) throw ConfigError("batch.identities", "exceeds num_train_ids");
  if (batch.images_per_identity < 2 || batch.images_per_identity % 2 != 0)
    throw ConfigError("batch.images_per_identity", "must be even and >= 2");
  if (batch.images_per_identity / 2 > dataset.images_per_id_per_modality)
    throw ConfigError("batch.images_per_identity", "exceeds images per identity per modality");
  if (ranks.empty()) throw ConfigError("eval.ranks", "must not be empty");
  for (std::size_t i = 0; i < ranks.size(); ++i)
    if (ranks[i] < 1 || (i > 0 && ranks[i] <= ranks[i - 1]))
      throw ConfigError("eval.ranks", "must be strictly ascending and >= 1");
  for (std::size_t i = 0; i < experiments.regularizers.size(); ++i) {
    try {
      regularizer_from_string(experiments.regularizers[i]);
    } catch (const ValidationError& e) {
      throw ConfigError("experiments.regularizers[" + std::to_string(i) + "]", e.what());
    }
  }
  const auto& p = experiments.sweep.parameter;
  if (p != "B" && p != "M" && p != "tau") throw ConfigError("experiments.sweep.parameter", "must be B, M or tau");
}

nlohmann::json to_json(const ExperimentConfig& c) {
  const auto& o = c.objective;
  json ds;
  to_json(ds, c.dataset);
  return json{
      {"version", c.version},
      {"seed", c.seed},
      {"regularizer", std::string(to_string(o.regularizer))},
      {"dataset", ds},
      {"model", {{"feature_dim", c.feature_dim}, {"parts", c.parts}}},
      {"mix",
       {{"mixed_parts", o.mix.mixed_parts}, {"positive_cap", o.mix.positive_cap}, {"negative_cap", o.mix.negative_cap}}},
      {"mining", {{"positive_quota", o.positive_quota}, {"negative_quota", o.negative_quota}}},
      {"losses",
       {{"tau", o.tau},
        {"rho", o.rho},
        {"sid", o.weights.sid},
        {"ml", o.weights.ml},
        {"aid", o.weights.aid},
        {"cont", o.weights.cont},
        {"mix_weight", o.mix_weight},
        {"mix_alpha", o.mix_alpha},
        {"ema_momentum", c.ema_momentum}}},
      {"optimizer",
       {{"lr", c.optimizer.lr},
        {"decay_epochs", c.optimizer.decay_epochs},
        {"decay_factor", c.optimizer.decay_factor},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"eps", c.optimizer.eps}}},
      {"schedule",
       {{"warmup_epochs", c.schedule.warmup_epochs},
        {"total_epochs", c.schedule.total_epochs},
        {"batches_per_epoch", c.schedule.batches_per_epoch}}},
      {"batch", {{"identities", c.batch.identities}, {"images_per_identity", c.batch.images_per_identity}}},
      {"eval", {{"ranks", c.ranks}}},
      {"experiments",
       {{"seeds", c.experiments.seeds},
        {"regularizers", c.experiments.regularizers},
        {"sweep", {{"parameter", c.experiments.sweep.parameter}, {"values", c.experiments.sweep.values}}},
        {"gradcheck_trials", c.experiments.gradcheck_trials},
        {"oracle_instances", c.experiments.oracle_instances}}},
  };
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  ObjectReader root(j, "");
  if (!root.has("version")) throw ConfigError("version", "missing required key");
  root.read("version", c.version);
  if (c.version != kConfigVersion) throw ConfigError("version", "unsupported config version " + std::to_string(c.version));
  root.read("seed", c.seed);
  if (root.has("regularizer")) {
    std::string name;
    root.read("regularizer", name);
    try {
      c.objective.regularizer = regularizer_from_string(name);
    } catch (const ValidationError& e) {
      throw ConfigError("regularizer", e.what());
    }
  }
  if (root.has("dataset")) c.dataset = dataset_spec_from_json(root.at("dataset"), "dataset");
  if (root.has("model")) {
    ObjectReader r(root.at("model"), "model");
    r.read("feature_dim", c.feature_dim);
    r.read("parts", c.parts);
    r.finish();
  }
  auto& o = c.objective;
  if (root.has("mix")) {
    ObjectReader r(root.at("mix"), "mix");
    r.read("mixed_parts", o.mix.mixed_parts);
    r.read("positive_cap", o.mix.positive_cap);
    r.read("negative_cap", o.mix.negative_cap);
    r.finish();
  }
  if (root.has("mining")) {
    ObjectReader r(root.at("mining"), "mining");
    r.read("positive_quota", o.positive_quota);
    r.read("negative_quota", o.negative_quota);
    r.finish();
  }
  if (root.has("losses")) {
    ObjectReader r(root.at("losses"), "losses");
    r.read("tau", o.tau);
    r.read("rho", o.rho);
    r.read("sid", o.weights.sid);
    r.read("ml", o.weights.ml);
    r.read("aid", o.weights.aid);
    r.read("cont", o.weights.cont);
    r.read("mix_weight", o.mix_weight);
    r.read("mix_alpha", o.mix_alpha);
    r.read("ema_momentum", c.ema_momentum);
    r.finish();
  }
  if (root.has("optimizer")) {
    ObjectReader r(root.at("optimizer"), "optimizer");
    r.read("lr", c.optimizer.lr);
    r.read("decay_epochs", c.optimizer.decay_epochs);
    r.read("decay_factor", c.optimizer.decay_factor);
    r.read("beta1", c.optimizer.beta1);
    r.read("beta2", c.optimizer.beta2);
    r.read("eps", c.optimizer.eps);
    r.finish();
  }
  if (root.has("schedule")) {
    ObjectReader r(root.at("schedule"), "schedule");
    r.read("warmup_epochs", c.schedule.warmup_epochs);
    r.read("total_epochs", c.schedule.total_epochs);
    r.read("batches_per_epoch", c.schedule.batches_per_epoch);
    r.finish();
  }
  if (root.has("batch")) {
    ObjectReader r(root.at("batch"), "batch");
    r.read("identities", c.batch.identities);
    r.read("images_per_identity", c.batch.images_per_identity);
    r.finish();
  }
  if (root.has("eval")) {
    ObjectReader r(root.at("eval"), "eval");
    r.read("ranks", c.ranks);
    r.finish();
  }
  if (root.has("experiments")) {
    ObjectReader r(root.at("experiments"), "experiments");
    r.read("seeds", c.experiments.seeds);
    r.read("regularizers", c.experiments.regularizers);
    if (r.has("sweep")) {
      ObjectReader s(r.at("sweep"), "experiments.sweep");
      s.read("parameter", c.experiments.sweep.parameter);
      s.read("values", c.experiments.sweep.values);
      s.finish();
    }
    r.read("gradcheck_trials", c.experiments.gradcheck_trials);
    r.read("oracle_instances", c.experiments.oracle_instances);
    r.finish();
  }
  root.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("--config", "cannot open " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("--config", std::string("invalid JSON: ") + e.what());
  }
  return config_from_json(j);
}

std::uint64_t config_hash(const ExperimentConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json(c).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace partmix
