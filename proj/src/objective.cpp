#include "partmix/objective.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <exception>
#include <string>

#include "partmix/errors.hpp"
#include "partmix/mining.hpp"

namespace partmix {

namespace {

constexpr std::array<Regularizer, 8> kRegularizers{
    Regularizer::none,       Regularizer::partmix, Regularizer::partmix_no_mining, Regularizer::intra_only,
    Regularizer::inter_only, Regularizer::mixup,   Regularizer::manifold_mixup,    Regularizer::cutmix};

}  // namespace

std::string_view to_string(Regularizer r) {
  switch (r) {
    case Regularizer::none: return "none";
    case Regularizer::partmix: return "partmix";
    case Regularizer::partmix_no_mining: return "partmix_no_mining";
    case Regularizer::intra_only: return "intra_only";
    case Regularizer::inter_only: return "inter_only";
    case Regularizer::mixup: return "mixup";
    case Regularizer::manifold_mixup: return "manifold_mixup";
    case Regularizer::cutmix: return "cutmix";
  }
  return "?";
}

Regularizer regularizer_from_string(std::string_view s) {
  for (Regularizer r : kRegularizers)
    if (to_string(r) == s) return r;
  throw ValidationError("unknown regularizer '" + std::string(s) + "'");
}

std::span<const Regularizer> all_regularizers() { return kRegularizers; }

bool uses_part_mix(Regularizer r) {
  return r == Regularizer::partmix || r == Regularizer::partmix_no_mining || r == Regularizer::intra_only ||
         r == Regularizer::inter_only;
}

bool uses_mining(Regularizer r) {
  return r == Regularizer::partmix || r == Regularizer::intra_only || r == Regularizer::inter_only;
}

bool uses_pixel_or_feature_mix(Regularizer r) {
  return r == Regularizer::mixup || r == Regularizer::manifold_mixup || r == Regularizer::cutmix;
}

MixSpec ObjectiveConfig::resolved_mix() const {
  MixSpec s = mix;
  s.use_inter = regularizer != Regularizer::intra_only;
  s.use_intra = regularizer != Regularizer::inter_only;
  return s;
}

namespace {

struct AnchorPlan {
  ContrastiveAnchor anchor;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  bool empty_positive = false;
  bool empty_negative = false;
};

std::vector<MixedSample> random_subset(std::vector<MixedSample> pool, std::size_t quota, Rng rng) {
  if (pool.size() <= quota) return pool;
  std::vector<MixedSample> out;
  for (std::size_t i : rng.sample_without_replacement(pool.size(), quota)) out.push_back(std::move(pool[i]));
  return out;
}

AnchorPlan plan_anchor(const Model& model, const BankPair& banks, std::size_t row, const ObjectiveConfig& cfg,
                       const MixSpec& spec, const Rng& rng) {
  const Rng ar = rng.split("anchor").split(static_cast<std::uint64_t>(row));
  const BankEntry& entry = banks.entry(row);
  AnchorPlan out;
  out.anchor.anchor = row;
  std::vector<MixedSample> pos;
  try {
    pos = gen_positive(entry, banks, spec, ar.split("positive"));
  } catch (const EmptyPoolError&) {
    out.empty_positive = true;
  }
  auto neg = gen_negative(entry, banks, spec, ar.split("negative"));
  out.empty_negative = neg.empty();
  out.positives = pos.size();
  out.negatives = neg.size();
  if (uses_mining(cfg.regularizer)) {
    if (!pos.empty() || !neg.empty())
      out.anchor.banks = mine(entry.parts, pos, neg, cfg.positive_quota, cfg.negative_quota, model.part_classifier());
  } else {
    out.anchor.banks.positives = random_subset(std::move(pos), cfg.positive_quota, ar.split("select_positive"));
    out.anchor.banks.negatives = random_subset(std::move(neg), cfg.negative_quota, ar.split("select_negative"));
  }
  return out;
}

BatchPlan plan_impl(const Model& model, std::span<const PersonImage> images, const ObjectiveConfig& cfg, Rng rng,
                    bool parallel) {
  BatchPlan plan;
  if (!cfg.full_phase || cfg.regularizer == Regularizer::none) return plan;
  const std::size_t n = images.size();

  if (uses_pixel_or_feature_mix(cfg.regularizer)) {
    const auto partner = rng.split("pairs").permutation(n);
    const MixLayer layer = cfg.regularizer == Regularizer::manifold_mixup && rng.split("layer").below(2) == 1
                               ? MixLayer::post_embed
                               : MixLayer::input;
    for (std::size_t i = 0; i < n; ++i) {
      Rng mr = rng.split("pair").split(static_cast<std::uint64_t>(i));
      BaselineMix m{i, partner[i], mr.beta(cfg.mix_alpha), layer, false, {}};
      if (cfg.regularizer == Regularizer::cutmix) {
        m.cut = true;
        m.box = sample_cut_box(images[i].height(), images[i].width(), m.lambda, mr);
        m.lambda = 1.0 - static_cast<double>(m.box.area()) /
                             static_cast<double>(images[i].height() * images[i].width());
      }
      plan.mixes.push_back(m);
    }
    return plan;
  }

  const MixSpec spec = cfg.resolved_mix();
  std::vector<const Tensor*> pix;
  for (const auto& im : images) pix.push_back(&im.pixels);
  const auto encs = parallel ? encode_batch(model, pix) : encode_batch_serial(model, pix);
  std::vector<PersonDescriptor> descs;
  for (const auto& e : encs) descs.push_back(e.descriptor);
  const BankPair banks = BankPair::from_batch(descs, images);

  std::vector<AnchorPlan> per(n);
  if (parallel) {
    std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 4)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
      try {
        per[static_cast<std::size_t>(i)] = plan_anchor(model, banks, static_cast<std::size_t>(i), cfg, spec, rng);
      } catch (...) {
#pragma omp critical
        if (!error) error = std::current_exception();
      }
    }
    if (error) std::rethrow_exception(error);
  } else {
    for (std::size_t i = 0; i < n; ++i) per[i] = plan_anchor(model, banks, i, cfg, spec, rng);
  }
  for (auto& a : per) {
    plan.positive_candidates += a.positives;
    plan.negative_candidates += a.negatives;
    plan.empty_positive_pools += a.empty_positive ? 1 : 0;
    plan.empty_negative_pools += a.empty_negative ? 1 : 0;
    plan.anchors.push_back(std::move(a.anchor));
  }
  return plan;
}

}  // namespace

BatchPlan plan_batch(const Model& model, std::span<const PersonImage> images, const ObjectiveConfig& cfg, Rng rng) {
  return plan_impl(model, images, cfg, rng, true);
}

BatchPlan plan_batch_serial(const Model& model, std::span<const PersonImage> images, const ObjectiveConfig& cfg,
                            Rng rng) {
  return plan_impl(model, images, cfg, rng, false);
}

ObjectiveResult evaluate_objective(const Model& model, std::span<const PersonImage> images, const BatchPlan& plan,
                                   const ObjectiveConfig& cfg, std::span<double> grad) {
  const auto& dims = model.dims();
  const std::size_t n = images.size();
  const std::size_t dd = dims.descriptor_dim();
  const bool want_grad = !grad.empty();
  if (want_grad && grad.size() != model.layout().total) throw ShapeError("objective: gradient size mismatch");

  std::vector<const Tensor*> pix;
  std::vector<int> labels;
  std::vector<Modality> mods;
  for (const auto& im : images) {
    pix.push_back(&im.pixels);
    labels.push_back(im.identity);
    mods.push_back(im.modality);
  }
  const auto encs = encode_batch(model, pix);
  std::vector<double> desc(n * dd);
  for (std::size_t i = 0; i < n; ++i)
    std::copy(encs[i].descriptor.concatenated.begin(), encs[i].descriptor.concatenated.end(), desc.begin() + i * dd);

  const bool part_terms = cfg.full_phase && uses_part_mix(cfg.regularizer);
  LossInputs in;
  in.descriptors = dense_rows(std::span<const double>(desc), n, dd);
  in.feature_dim = dims.feature_dim;
  in.labels = labels;
  in.modalities = mods;
  in.shared = model.shared_classifier();
  in.part = model.part_classifier();
  in.visible = model.modality_classifier(Modality::visible);
  in.infrared = model.modality_classifier(Modality::infrared);
  in.mean_visible = model.mean_classifier(Modality::visible);
  in.mean_infrared = model.mean_classifier(Modality::infrared);
  if (part_terms) in.anchors = plan.anchors;
  in.tau = cfg.tau;
  in.rho = cfg.rho;
  in.include_aid = part_terms;
  in.include_cont = part_terms;

  std::vector<double> d_desc(want_grad ? n * dd : 0, 0.0);
  LossSinks sinks;
  if (want_grad) {
    sinks.d_desc = dense_rows(std::span<double>(d_desc), n, dd);
    sinks.shared = model.grad_view(grad, Block::shared_w);
    sinks.part = model.grad_view(grad, Block::part_w);
    sinks.visible = model.grad_view(grad, Block::visible_w);
    sinks.infrared = model.grad_view(grad, Block::infrared_w);
  }
  ObjectiveResult result;
  result.losses = total_loss(in, cfg.weights, want_grad ? &sinks : nullptr);
  result.total = result.losses.total;

  std::vector<FeatureMap> extra_df;
  if (cfg.full_phase && uses_pixel_or_feature_mix(cfg.regularizer) && !plan.mixes.empty()) {
    // Virtual items: pixel-mixed ones are re-encoded, feature-mixed ones reuse the parents' embeddings.
    std::vector<Tensor> mixed_pixels;
    std::vector<std::size_t> pixel_items, feature_items;
    std::vector<LabelWeights> soft;
    std::vector<Encoding> venc(plan.mixes.size());
    for (std::size_t v = 0; v < plan.mixes.size(); ++v) {
      const auto& m = plan.mixes[v];
      if (m.a >= n || m.b >= n) throw ShapeError("objective: mix row out of range");
      const int ya = images[m.a].identity, yb = images[m.b].identity;
      soft.push_back({{ya, m.lambda}, {yb, 1.0 - m.lambda}});
      if (m.cut) {
        mixed_pixels.push_back(apply_cut(images[m.a].pixels, images[m.b].pixels, m.box));
        pixel_items.push_back(v);
      } else if (m.layer == MixLayer::input) {
        mixed_pixels.push_back(mixup(images[m.a], images[m.b], m.lambda).pixels);
        pixel_items.push_back(v);
      } else {
        const auto h = manifold_mixup(encs[m.a].features.values, encs[m.b].features.values, ya, yb, m.lambda,
                                      MixLayer::post_embed);
        FeatureMap f(encs[m.a].features.positions, encs[m.a].features.channels);
        f.values = h.values;
        venc[v] = encode_features(model, std::move(f));
        feature_items.push_back(v);
      }
    }
    std::vector<const Tensor*> vpix;
    for (const auto& t : mixed_pixels) vpix.push_back(&t);
    auto pixel_encs = encode_batch(model, vpix);
    for (std::size_t j = 0; j < pixel_items.size(); ++j) venc[pixel_items[j]] = std::move(pixel_encs[j]);

    const std::size_t nv = plan.mixes.size();
    std::vector<double> vdesc(nv * dd);
    for (std::size_t v = 0; v < nv; ++v)
      std::copy(venc[v].descriptor.concatenated.begin(), venc[v].descriptor.concatenated.end(),
                vdesc.begin() + v * dd);
    std::vector<double> d_vdesc(want_grad ? nv * dd : 0, 0.0);
    const MutRows d_vrows = want_grad ? dense_rows(std::span<double>(d_vdesc), nv, dd) : MutRows{};
    result.mix_term = soft_label_id_loss(dense_rows(std::span<const double>(vdesc), nv, dd), soft,
                                         model.shared_classifier(), cfg.mix_weight,
                                         want_grad ? sinks.shared : AffineGrad{}, d_vrows);
    result.total += cfg.mix_weight * result.mix_term;

    if (want_grad) {
      if (!feature_items.empty()) {
        extra_df.reserve(n);
        for (std::size_t i = 0; i < n; ++i) extra_df.emplace_back(encs[i].features.positions, encs[i].features.channels);
        for (std::size_t v : feature_items) {
          const auto& m = plan.mixes[v];
          const FeatureMap df = head_backward(model, venc[v], d_vrows.row(v), grad);
          for (std::size_t j = 0; j < df.values.size(); ++j) {
            extra_df[m.a].values[j] += m.lambda * df.values[j];
            extra_df[m.b].values[j] += (1.0 - m.lambda) * df.values[j];
          }
        }
      }
      if (!pixel_items.empty()) {
        std::vector<Encoding> pe;
        std::vector<double> pd(pixel_items.size() * dd);
        for (std::size_t j = 0; j < pixel_items.size(); ++j) {
          pe.push_back(venc[pixel_items[j]]);
          std::copy_n(d_vdesc.begin() + pixel_items[j] * dd, dd, pd.begin() + j * dd);
        }
        encoder_backward_batch(model, vpix, pe, dense_rows(std::span<const double>(pd), pixel_items.size(), dd), {},
                               grad);
      }
    }
  }

  if (!std::isfinite(result.total)) throw NumericError("objective: non-finite loss");
  if (want_grad)
    encoder_backward_batch(model, pix, encs, dense_rows(std::span<const double>(d_desc), n, dd), extra_df, grad);
  return result;
}

}  // namespace partmix
