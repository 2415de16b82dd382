#include "partmix/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <string>

#include "partmix/errors.hpp"
#include "partmix/numerics.hpp"
#include "partmix/rng.hpp"

namespace partmix {

RunSeeds RunSeeds::from(std::uint64_t seed) {
  const Rng root(seed);
  auto draw = [&](std::string_view name) { return root.split(name)(); };
  return {draw("data"), draw("init"), draw("batch"), draw("mix"), draw("protocol")};
}

double RunRecord::headline_map() const {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& m : metrics)
    if (m.protocol.shot_mode == ShotMode::multi) {
      s += m.map_score;
      ++n;
    }
  return n == 0 ? 0.0 : s / static_cast<double>(n);
}

double learning_rate(const OptimizerConfig& opt, std::size_t epoch) {
  double lr = opt.lr;
  for (std::size_t e : opt.decay_epochs)
    if (e <= epoch) lr *= opt.decay_factor;
  return lr;
}

DatasetSplit make_split(const ExperimentConfig& cfg) {
  return generate_dataset(cfg.dataset, RunSeeds::from(cfg.seed).data);
}

Model initial_model(const ExperimentConfig& cfg) {
  return Model::initialize(cfg.model_dims(), Rng(RunSeeds::from(cfg.seed).init));
}

std::vector<MetricsReport> evaluate_model(const Model& model, const DatasetSplit& split,
                                          const std::vector<std::size_t>& ranks) {
  // The single-shot gallery pick depends on the data only, so runs sharing a split share galleries.
  const std::uint64_t protocol_seed = Rng(split.seed).split("protocol")();
  std::vector<MetricsReport> out;
  for (const auto& p : default_protocols(ranks)) out.push_back(run_protocol(model, split, p, protocol_seed));
  return out;
}

TrainResult train(const ExperimentConfig& cfg, const DatasetSplit& split, const TrainHooks* hooks) {
  cfg.validate();
  if (split.spec.channels != cfg.dataset.channels || split.train_ids.size() != cfg.dataset.num_train_ids)
    throw ValidationError("train: dataset does not match config");
  const auto start = std::chrono::steady_clock::now();
  const RunSeeds seeds = RunSeeds::from(cfg.seed);
  TrainResult out{Model::initialize(cfg.model_dims(), Rng(seeds.init)), {}};
  Model& model = out.model;
  RunRecord& rec = out.record;
  rec.config_hash = config_hash(cfg);
  rec.seed = cfg.seed;
  rec.regularizer = cfg.objective.regularizer;
  auto& diag = rec.diagnostics;

  AdamState adam(model.params().size(), cfg.optimizer.lr, cfg.optimizer.beta1, cfg.optimizer.beta2,
                 cfg.optimizer.eps);
  std::vector<double> grad(model.params().size());
  const Rng batch_rng(seeds.batch), mix_rng(seeds.mix);

  for (std::size_t epoch = 0; epoch < cfg.schedule.total_epochs; ++epoch) {
    const bool warmup = epoch < cfg.schedule.warmup_epochs;
    ObjectiveConfig ocfg = cfg.objective;
    ocfg.full_phase = !warmup;
    adam.lr = learning_rate(cfg.optimizer, epoch);
    EpochLosses acc;
    acc.epoch = epoch;
    acc.lr = adam.lr;
    for (std::size_t b = 0; b < cfg.schedule.batches_per_epoch; ++b) {
      const std::uint64_t bseed = batch_rng.split(epoch).split(b)();
      const MiniBatch mb = sample_minibatch(split.train, cfg.batch.identities, cfg.batch.images_per_identity, bseed);
      BatchPlan plan;
      if (ocfg.full_phase && ocfg.regularizer != Regularizer::none) {
        plan = plan_batch(model, mb.images, ocfg, mix_rng.split(epoch).split(b));
        ++(warmup ? diag.warmup_plans_built : diag.plans_built);
        diag.empty_positive_pools += plan.empty_positive_pools;
        diag.empty_negative_pools += plan.empty_negative_pools;
        if (hooks && hooks->on_plan) hooks->on_plan(epoch, b, plan, mb.images);
      }
      std::fill(grad.begin(), grad.end(), 0.0);
      ObjectiveResult res;
      try {
        res = evaluate_objective(model, mb.images, plan, ocfg, grad);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + " batch " + std::to_string(b) + ": " + e.what());
      }
      for (double g : grad)
        if (!std::isfinite(g))
          throw NumericError("epoch " + std::to_string(epoch) + " batch " + std::to_string(b) +
                             ": non-finite gradient");
      const auto& l = res.losses;
      if (l.aid_evaluated) ++(warmup ? diag.warmup_aid_evaluations : diag.aid_evaluations);
      if (l.cont_evaluated) ++(warmup ? diag.warmup_cont_evaluations : diag.cont_evaluations);
      diag.skipped_anchors += l.contrastive_skipped;
      diag.contrastive_anchors += l.contrastive_anchors;

      acc.id += l.id;
      acc.cc += l.cc;
      acc.sid += l.sid;
      acc.ml += l.ml;
      acc.aid += l.aid;
      // The mixing baselines report their soft-label term in the contrastive column.
      acc.cont += l.cont + res.mix_term;
      acc.total += res.total;

      adam_step(model.params(), grad, adam);
      model.update_mean_classifiers(cfg.ema_momentum);
      ++diag.optimizer_steps;
    }
    const double inv = 1.0 / static_cast<double>(cfg.schedule.batches_per_epoch);
    for (double* v : {&acc.id, &acc.cc, &acc.sid, &acc.ml, &acc.aid, &acc.cont, &acc.total}) *v *= inv;
    rec.epochs.push_back(acc);
  }
  rec.metrics = evaluate_model(model, split, cfg.ranks);
  rec.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

void write_losses_csv(std::span<const EpochLosses> epochs, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw ValidationError("cannot open " + file.string() + " for writing");
  out << "epoch,L_id,L_cc,L_sid,L_ML,L_aid,L_cont,total\n";
  for (const auto& e : epochs)
    out << e.epoch << ',' << format_double(e.id) << ',' << format_double(e.cc) << ',' << format_double(e.sid) << ','
        << format_double(e.ml) << ',' << format_double(e.aid) << ',' << format_double(e.cont) << ','
        << format_double(e.total) << '\n';
}

nlohmann::json to_json(const RunRecord& r) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"lr", e.lr},
                      {"L_id", e.id},
                      {"L_cc", e.cc},
                      {"L_sid", e.sid},
                      {"L_ML", e.ml},
                      {"L_aid", e.aid},
                      {"L_cont", e.cont},
                      {"total", e.total}});
  const auto& d = r.diagnostics;
  return {{"config_hash", hex64(r.config_hash)},
          {"seed", r.seed},
          {"regularizer", std::string(to_string(r.regularizer))},
          {"epochs", epochs},
          {"metrics", metrics_to_json(r.metrics)},
          {"headline_mAP", r.headline_map()},
          {"wall_clock_seconds", r.wall_clock_seconds},
          {"diagnostics",
           {{"optimizer_steps", d.optimizer_steps},
            {"aid_evaluations", d.aid_evaluations},
            {"cont_evaluations", d.cont_evaluations},
            {"warmup_aid_evaluations", d.warmup_aid_evaluations},
            {"warmup_cont_evaluations", d.warmup_cont_evaluations},
            {"plans_built", d.plans_built},
            {"warmup_plans_built", d.warmup_plans_built},
            {"empty_positive_pools", d.empty_positive_pools},
            {"empty_negative_pools", d.empty_negative_pools},
            {"skipped_anchors", d.skipped_anchors},
            {"contrastive_anchors", d.contrastive_anchors}}}};
}

}  // namespace partmix
