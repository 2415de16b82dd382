#include <doctest.h>

#include "partmix/errors.hpp"
#include "partmix/objective.hpp"
#include "partmix/trainer.hpp"
#include "tiny_config.hpp"

using namespace partmix;

namespace {

struct Batch {
  ExperimentConfig cfg;
  DatasetSplit split;
  Model model;
  MiniBatch batch;

  explicit Batch(Regularizer r)
      : cfg(testing::tiny_config(r)), split(make_split(cfg)), model(initial_model(cfg)),
        batch(sample_minibatch(split.train, 3, 4, 11)) {}
};

bool same_samples(const std::vector<MixedSample>& a, const std::vector<MixedSample>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!(a[i].parts == b[i].parts) || a[i].donor_index != b[i].donor_index || !(a[i].replaced_slots == b[i].replaced_slots))
      return false;
  return true;
}

}  // namespace

TEST_CASE("regularizer names round-trip and unknown names fail") {
  for (Regularizer r : all_regularizers()) CHECK(regularizer_from_string(to_string(r)) == r);
  CHECK(all_regularizers().size() == 8);
  CHECK_THROWS_AS(regularizer_from_string("dropout"), ValidationError);
  CHECK(uses_mining(Regularizer::partmix));
  CHECK_FALSE(uses_mining(Regularizer::partmix_no_mining));
  CHECK(uses_part_mix(Regularizer::intra_only));
  CHECK_FALSE(uses_part_mix(Regularizer::mixup));
  CHECK(uses_pixel_or_feature_mix(Regularizer::cutmix));
}

TEST_CASE("routes follow the regularizer") {
  ObjectiveConfig c;
  c.regularizer = Regularizer::intra_only;
  CHECK_FALSE(c.resolved_mix().use_inter);
  CHECK(c.resolved_mix().use_intra);
  c.regularizer = Regularizer::inter_only;
  CHECK(c.resolved_mix().use_inter);
  CHECK_FALSE(c.resolved_mix().use_intra);
}

TEST_CASE("warm-up plans are empty and skip the regularizer losses") {
  for (Regularizer r : all_regularizers()) {
    Batch b(r);
    auto oc = b.cfg.objective;
    oc.full_phase = false;
    const auto plan = plan_batch(b.model, b.batch.images, oc, Rng(1));
    CHECK(plan.anchors.empty());
    CHECK(plan.mixes.empty());
    const auto res = evaluate_objective(b.model, b.batch.images, plan, oc, {});
    CHECK_FALSE(res.losses.aid_evaluated);
    CHECK_FALSE(res.losses.cont_evaluated);
    CHECK(res.mix_term == 0.0);
  }
}

TEST_CASE("none has an empty plan even in the full phase") {
  Batch b(Regularizer::none);
  const auto plan = plan_batch(b.model, b.batch.images, b.cfg.objective, Rng(1));
  CHECK(plan.anchors.empty());
  CHECK(plan.mixes.empty());
  const auto res = evaluate_objective(b.model, b.batch.images, plan, b.cfg.objective, {});
  CHECK_FALSE(res.losses.aid_evaluated);
  CHECK_FALSE(res.losses.cont_evaluated);
}

TEST_CASE("partmix plans respect the mining quotas and match the serial reference") {
  for (Regularizer r : {Regularizer::partmix, Regularizer::partmix_no_mining, Regularizer::intra_only, Regularizer::inter_only}) {
    Batch b(r);
    const auto par = plan_batch(b.model, b.batch.images, b.cfg.objective, Rng(5));
    const auto ser = plan_batch_serial(b.model, b.batch.images, b.cfg.objective, Rng(5));
    REQUIRE(par.anchors.size() == ser.anchors.size());
    CHECK(par.anchors.size() == b.batch.images.size());
    for (std::size_t i = 0; i < par.anchors.size(); ++i) {
      CHECK(par.anchors[i].anchor == ser.anchors[i].anchor);
      CHECK(same_samples(par.anchors[i].banks.positives, ser.anchors[i].banks.positives));
      CHECK(same_samples(par.anchors[i].banks.negatives, ser.anchors[i].banks.negatives));
      CHECK(par.anchors[i].banks.positives.size() <= 2);
      CHECK(par.anchors[i].banks.negatives.size() <= 20);
    }
    const auto res = evaluate_objective(b.model, b.batch.images, par, b.cfg.objective, {});
    CHECK(res.losses.aid_evaluated);
    CHECK(res.losses.cont_evaluated);
    CHECK(res.total == doctest::Approx(res.losses.total).epsilon(1e-15));
  }
}

TEST_CASE("intra-only positives come from the anchor's own modality") {
  Batch b(Regularizer::intra_only);
  const auto plan = plan_batch(b.model, b.batch.images, b.cfg.objective, Rng(2));
  for (const auto& a : plan.anchors)
    for (const auto& s : a.banks.positives) {
      CHECK(s.route == Route::intra);
      CHECK(b.batch.images[s.donor_index].modality == b.batch.images[a.anchor].modality);
    }
}

TEST_CASE("baseline mixers plan one mix per row") {
  for (Regularizer r : {Regularizer::mixup, Regularizer::manifold_mixup, Regularizer::cutmix}) {
    Batch b(r);
    const auto plan = plan_batch(b.model, b.batch.images, b.cfg.objective, Rng(3));
    CHECK(plan.anchors.empty());
    CHECK(plan.mixes.size() == b.batch.images.size());
    for (const auto& m : plan.mixes) {
      CHECK(m.lambda >= 0.0);
      CHECK(m.lambda <= 1.0);
      CHECK(m.cut == (r == Regularizer::cutmix));
    }
    const auto res = evaluate_objective(b.model, b.batch.images, plan, b.cfg.objective, {});
    CHECK(res.mix_term > 0.0);
    CHECK_FALSE(res.losses.cont_evaluated);
    CHECK(res.total == doctest::Approx(res.losses.total + 0.5 * res.mix_term).epsilon(1e-14));
  }
}

TEST_CASE("plans are reproducible from the stream") {
  Batch b(Regularizer::partmix);
  const auto p1 = plan_batch(b.model, b.batch.images, b.cfg.objective, Rng(9));
  const auto p2 = plan_batch(b.model, b.batch.images, b.cfg.objective, Rng(9));
  for (std::size_t i = 0; i < p1.anchors.size(); ++i)
    CHECK(same_samples(p1.anchors[i].banks.negatives, p2.anchors[i].banks.negatives));
}
