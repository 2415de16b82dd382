#include "partmix/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <memory>

#include "partmix/augment.hpp"
#include "partmix/encoder.hpp"
#include "partmix/losses.hpp"
#include "partmix/numerics.hpp"
#include "partmix/objective.hpp"
#include "partmix/rng.hpp"
#include "partmix/trainer.hpp"

namespace partmix {

bool GradcheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

std::vector<std::string> GradcheckReport::failed_ops() const {
  std::vector<std::string> out;
  for (const auto& e : entries)
    if (!e.passed && std::find(out.begin(), out.end(), e.op) == out.end()) out.push_back(e.op);
  return out;
}

nlohmann::json GradcheckReport::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : entries)
    arr.push_back({{"op", e.op},
                   {"trial", e.trial},
                   {"max_relative_error", e.max_relative_error},
                   {"worst_index", e.worst_index},
                   {"coordinates_checked", e.coordinates_checked},
                   {"passed", e.passed}});
  return {{"passed", passed()}, {"seconds", seconds}, {"entries", arr}};
}

GradcheckEntry check_op(const GradOp& op, std::size_t trial, double step, double tolerance) {
  const auto analytic = op.gradient(op.point);
  const auto r = fd_gradient_check(op.value, op.point, analytic, step, op.coordinates);
  return {op.name, trial, r.max_relative_error, r.worst_index, r.coordinates_checked,
          r.max_relative_error < tolerance};
}

namespace {

using Vec = std::vector<double>;

Vec normal_vector(Rng& rng, std::size_t n, double sd = 1.0) {
  Vec v(n);
  for (double& x : v) x = sd * rng.normal();
  return v;
}

Vec concat(std::initializer_list<const Vec*> parts) {
  Vec out;
  for (const auto* p : parts) out.insert(out.end(), p->begin(), p->end());
  return out;
}

// Splits a flat vector into consecutive spans of the given sizes.
std::vector<std::span<const double>> cut(std::span<const double> x, const std::vector<std::size_t>& sizes) {
  std::vector<std::span<const double>> out;
  std::size_t off = 0;
  for (std::size_t s : sizes) {
    out.push_back(x.subspan(off, s));
    off += s;
  }
  return out;
}

std::vector<std::span<double>> cut(std::span<double> x, const std::vector<std::size_t>& sizes) {
  std::vector<std::span<double>> out;
  std::size_t off = 0;
  for (std::size_t s : sizes) {
    out.push_back(x.subspan(off, s));
    off += s;
  }
  return out;
}

AffineView affine_of(std::span<const double> w, std::span<const double> b, std::size_t in, std::size_t out) {
  return {w, b, in, out};
}

// Small fixed problem sizes keep every op well inside the time budget.
struct Sizes {
  std::size_t cin = 3, cf = 4, parts = 3, ids = 5, height = 6, width = 4;
  std::size_t rows = 8;  // 4 identities x 2 images, alternating modality
};

std::vector<int> row_labels(const Sizes& s) {
  std::vector<int> y(s.rows);
  for (std::size_t i = 0; i < s.rows; ++i) y[i] = static_cast<int>(i / 2);
  return y;
}

std::vector<Modality> row_modalities(const Sizes& s) {
  std::vector<Modality> m(s.rows);
  for (std::size_t i = 0; i < s.rows; ++i) m[i] = i % 2 == 0 ? Modality::visible : Modality::infrared;
  return m;
}

std::vector<ContrastiveAnchor> random_anchors(const Sizes& s, std::span<const double> parts_flat, Rng rng) {
  const std::size_t pd = s.parts * s.cf;
  std::vector<PartDescriptorSet> sets;
  for (std::size_t i = 0; i < s.rows; ++i)
    sets.emplace_back(s.cf, Vec(parts_flat.begin() + static_cast<long>(i * pd),
                                parts_flat.begin() + static_cast<long>((i + 1) * pd)));
  const auto ids = row_labels(s);
  const auto mods = row_modalities(s);
  const BankPair banks = make_bank_pair(sets, ids, mods);
  MixSpec spec;
  spec.mixed_parts = 1 + rng.below(s.parts - 1);
  std::vector<ContrastiveAnchor> anchors;
  for (std::size_t i = 0; i < s.rows; ++i) {
    ContrastiveAnchor a;
    a.anchor = i;
    auto pos = gen_positive(banks.entry(i), banks, spec, rng.split("pos").split(i));
    auto neg = gen_negative(banks.entry(i), banks, spec, rng.split("neg").split(i));
    pos.resize(std::min<std::size_t>(pos.size(), 2));
    neg.resize(std::min<std::size_t>(neg.size(), 5));
    a.banks.positives = std::move(pos);
    a.banks.negatives = std::move(neg);
    anchors.push_back(std::move(a));
  }
  return anchors;
}

std::vector<std::size_t> block_coordinates(const ParamLayout& layout, std::size_t per_block, Rng rng) {
  std::vector<std::size_t> out;
  for (std::size_t b = 0; b < kBlockCount; ++b) {
    const std::size_t k = std::min(per_block, layout.size[b]);
    for (std::size_t i : rng.sample_without_replacement(layout.size[b], k)) out.push_back(layout.offset[b] + i);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::vector<GradOp> gradcheck_ops(const ExperimentConfig& cfg, std::size_t trial, std::uint64_t seed) {
  const Rng root = Rng(seed).split("gradcheck").split(static_cast<std::uint64_t>(trial));
  const Sizes s;
  const std::size_t dd = (s.parts + 1) * s.cf, pd = s.parts * s.cf, npos = s.height * s.width;
  const auto labels = std::make_shared<std::vector<int>>(row_labels(s));
  const auto mods = std::make_shared<std::vector<Modality>>(row_modalities(s));
  std::vector<GradOp> ops;

  {  // affine map: r . (W x + b) wrt W, b, x
    Rng r = root.split("affine");
    const std::size_t in = 7, out = 5;
    const Vec w = normal_vector(r, in * out), b = normal_vector(r, out), x = normal_vector(r, in);
    const auto up = std::make_shared<Vec>(normal_vector(r, out));
    ops.push_back({"affine", concat({&w, &b, &x}),
                   [=](std::span<const double> t) {
                     const auto p = cut(t, {in * out, out, in});
                     return dot(*up, affine_apply(affine_of(p[0], p[1], in, out), p[2]));
                   },
                   [=](std::span<const double> t) {
                     Vec g(t.size(), 0.0);
                     const auto p = cut(t, {in * out, out, in});
                     const auto gp = cut(std::span<double>(g), {in * out, out, in});
                     affine_backward(affine_of(p[0], p[1], in, out), p[2], *up, {gp[0], gp[1]}, gp[2]);
                     return g;
                   },
                   {}});
  }
  {  // cosine similarity wrt both arguments
    Rng r = root.split("cosine");
    const std::size_t n = 9;
    const Vec a = normal_vector(r, n), b = normal_vector(r, n);
    ops.push_back({"cosine", concat({&a, &b}),
                   [=](std::span<const double> t) { return cosine_similarity(t.first(n), t.subspan(n)); },
                   [=](std::span<const double> t) {
                     Vec g(2 * n, 0.0);
                     cosine_backward(t.first(n), t.subspan(n), 1.0, std::span(g).first(n), std::span(g).subspan(n));
                     return g;
                   },
                   {}});
  }
  {  // per-position embedding wrt its weights
    Rng r = root.split("embed");
    const auto pixels = std::make_shared<Tensor>(std::vector<std::size_t>{s.height, s.width, s.cin});
    for (double& v : pixels->data) v = r.uniform();
    const Vec w = normal_vector(r, s.cf * s.cin, 0.7), b = normal_vector(r, s.cf, 0.3);
    const auto up = std::make_shared<Vec>(normal_vector(r, npos * s.cf));
    ops.push_back({"embed", concat({&w, &b}),
                   [=](std::span<const double> t) {
                     const auto p = cut(t, {s.cf * s.cin, s.cf});
                     return dot(*up, embed(affine_of(p[0], p[1], s.cin, s.cf), *pixels).values);
                   },
                   [=](std::span<const double> t) {
                     Vec g(t.size(), 0.0);
                     const auto p = cut(t, {s.cf * s.cin, s.cf});
                     const auto gp = cut(std::span<double>(g), {s.cf * s.cin, s.cf});
                     const auto emb = affine_of(p[0], p[1], s.cin, s.cf);
                     const FeatureMap f = embed(emb, *pixels);
                     FeatureMap df(npos, s.cf);
                     df.values = *up;
                     embed_backward(emb, *pixels, f, df, {gp[0], gp[1]});
                     return g;
                   },
                   {}});
  }
  {  // sigmoid part detector wrt weights and features
    Rng r = root.split("detect");
    const Vec w = normal_vector(r, s.parts * s.cf, 0.7), b = normal_vector(r, s.parts, 0.3);
    const Vec f = normal_vector(r, npos * s.cf, 0.5);
    const auto up = std::make_shared<Vec>(normal_vector(r, npos * s.parts));
    auto fmap = [=](std::span<const double> v) {
      FeatureMap m(npos, s.cf);
      m.values.assign(v.begin(), v.end());
      return m;
    };
    ops.push_back({"detect_parts", concat({&w, &b, &f}),
                   [=](std::span<const double> t) {
                     const auto p = cut(t, {s.parts * s.cf, s.parts, npos * s.cf});
                     return dot(*up, detect_parts(affine_of(p[0], p[1], s.cf, s.parts), fmap(p[2])).values);
                   },
                   [=](std::span<const double> t) {
                     Vec g(t.size(), 0.0);
                     const auto p = cut(t, {s.parts * s.cf, s.parts, npos * s.cf});
                     const auto gp = cut(std::span<double>(g), {s.parts * s.cf, s.parts, npos * s.cf});
                     const auto det = affine_of(p[0], p[1], s.cf, s.parts);
                     const FeatureMap fm = fmap(p[2]);
                     const PartMaps m = detect_parts(det, fm);
                     const FeatureMap df = detect_parts_backward(det, fm, m, *up, {gp[0], gp[1]});
                     std::copy(df.values.begin(), df.values.end(), gp[2].begin());
                     return g;
                   },
                   {}});
  }
  {  // masked average pooling wrt features and maps
    Rng r = root.split("pool");
    const Vec f = normal_vector(r, npos * s.cf);
    Vec m(npos * s.parts);
    for (double& v : m) v = r.uniform(0.05, 0.95);
    const auto up = std::make_shared<Vec>(normal_vector(r, pd));
    auto split_fm = [=](std::span<const double> t) {
      FeatureMap fm(npos, s.cf);
      fm.values.assign(t.begin(), t.begin() + static_cast<long>(npos * s.cf));
      PartMaps pm{npos, s.parts, Vec(t.begin() + static_cast<long>(npos * s.cf), t.end())};
      return std::pair{fm, pm};
    };
    ops.push_back({"pool_parts", concat({&f, &m}),
                   [=](std::span<const double> t) {
                     const auto [fm, pm] = split_fm(t);
                     return dot(*up, pool_parts(fm, pm).values);
                   },
                   [=](std::span<const double> t) {
                     const auto [fm, pm] = split_fm(t);
                     FeatureMap df(npos, s.cf);
                     Vec dm(npos * s.parts, 0.0);
                     pool_parts_backward(fm, pm, PartDescriptorSet(s.cf, *up), df, dm);
                     Vec g = df.values;
                     g.insert(g.end(), dm.begin(), dm.end());
                     return g;
                   },
                   {}});
  }
  {  // full encoder: r . d wrt embedding and detector parameters
    Rng r = root.split("encoder");
    const ModelDims dims{s.cin, s.cf, s.parts, s.ids};
    const auto base = std::make_shared<Model>(Model::initialize(dims, r.split("init")));
    const auto pixels = std::make_shared<Tensor>(std::vector<std::size_t>{s.height, s.width, s.cin});
    for (double& v : pixels->data) v = r.uniform();
    const auto up = std::make_shared<Vec>(normal_vector(r, dd));
    const std::size_t enc = base->layout().encoder_size;
    auto with = [=](std::span<const double> t) {
      Model m = *base;
      std::copy(t.begin(), t.end(), m.params().begin());
      return m;
    };
    ops.push_back({"encoder", Vec(base->params().begin(), base->params().begin() + static_cast<long>(enc)),
                   [=](std::span<const double> t) { return dot(*up, encode(with(t), *pixels).descriptor.concatenated); },
                   [=](std::span<const double> t) {
                     const Model m = with(t);
                     const Tensor* px[] = {pixels.get()};
                     const std::vector<Encoding> e{encode(m, *pixels)};
                     Vec g(m.layout().total, 0.0);
                     encoder_backward_batch(m, px, e, dense_rows(std::span<const double>(*up), 1, dd), {}, g);
                     g.resize(enc);
                     return g;
                   },
                   {}});
  }
  {  // contrastive term wrt similarities
    Rng r = root.split("contrastive_term");
    const std::size_t np = 2, nn = 5;
    // Cosines of random descriptor pairs, as the contrastive loss produces them.
    const Vec anchor = normal_vector(r, s.parts * s.cf);
    Vec sims(np + nn);
    for (double& v : sims) v = cosine_similarity(anchor, normal_vector(r, s.parts * s.cf));
    const double tau = cfg.objective.tau;
    ops.push_back({"contrastive_term", sims,
                   [=](std::span<const double> t) { return contrastive_term(t.first(np), t.subspan(np), tau).value; },
                   [=](std::span<const double> t) {
                     const auto term = contrastive_term(t.first(np), t.subspan(np), tau);
                     Vec g = term.d_positive;
                     g.insert(g.end(), term.d_negative.begin(), term.d_negative.end());
                     return g;
                   },
                   {}});
  }
  {  // contrastive loss wrt part rows, gradients routed through the mixes
    Rng r = root.split("contrastive_loss");
    const Vec parts = normal_vector(r, s.rows * pd);
    const auto anchors = std::make_shared<std::vector<ContrastiveAnchor>>(random_anchors(s, parts, r.split("anchors")));
    const double tau = cfg.objective.tau;
    ops.push_back({"contrastive_loss", parts,
                   [=](std::span<const double> t) {
                     return contrastive_loss(dense_rows(t, s.rows, pd), s.cf, *anchors, tau, 1.0, MutRows{}).value;
                   },
                   [=](std::span<const double> t) {
                     Vec g(t.size(), 0.0);
                     contrastive_loss(dense_rows(t, s.rows, pd), s.cf, *anchors, tau, 1.0,
                                      dense_rows(std::span<double>(g), s.rows, pd));
                     return g;
                   },
                   {}});
  }
  {  // part identity loss wrt part rows and C_p
    Rng r = root.split("part_id");
    const Vec x = normal_vector(r, s.rows * pd), w = normal_vector(r, s.ids * pd, 0.3), b = normal_vector(r, s.ids, 0.3);
    auto eval = [=](std::span<const double> t, Vec* g) {
      const auto p = cut(t, {s.rows * pd, s.ids * pd, s.ids});
      std::vector<std::span<double>> gp;
      if (g) gp = cut(std::span<double>(*g), {s.rows * pd, s.ids * pd, s.ids});
      return part_id_loss(dense_rows(p[0], s.rows, pd), *labels, affine_of(p[1], p[2], pd, s.ids), 1.0,
                          g ? AffineGrad{gp[1], gp[2]} : AffineGrad{},
                          g ? dense_rows(gp[0], s.rows, pd) : MutRows{});
    };
    ops.push_back({"part_id_loss", concat({&x, &w, &b}), [=](std::span<const double> t) { return eval(t, nullptr); },
                   [=](std::span<const double> t) {
                     Vec g(t.size(), 0.0);
                     eval(t, &g);
                     return g;
                   },
                   {}});
  }
  {  // shared identity loss
    Rng r = root.split("id");
    const Vec x = normal_vector(r, s.rows * dd), w = normal_vector(r, s.ids * dd, 0.3), b = normal_vector(r, s.ids, 0.3);
    auto eval = [=](std::span<const double> t, Vec* g) {
      const auto p = cut(t, {s.rows * dd, s.ids * dd, s.ids});
      std::vector<std::span<double>> gp;
      if (g) gp = cut(std::span<double>(*g), {s.rows * dd, s.ids * dd, s.ids});
      return id_loss(dense_rows(p[0], s.rows, dd), *labels, *mods, affine_of(p[1], p[2], dd, s.ids), 1.0,
                     g ? AffineGrad{gp[1], gp[2]} : AffineGrad{}, g ? dense_rows(gp[0], s.rows, dd) : MutRows{});
    };
    ops.push_back({"id_loss", concat({&x, &w, &b}), [=](std::span<const double> t) { return eval(t, nullptr); },
                   [=](std::span<const double> t) {
                     Vec g(t.size(), 0.0);
                     eval(t, &g);
                     return g;
                   },
                   {}});
  }
  {  // modality-specific identity loss and modality learning loss share a layout
    Rng r = root.split("modality");
    const Vec x = normal_vector(r, s.rows * dd);
    const Vec wv = normal_vector(r, s.ids * dd, 0.3), bv = normal_vector(r, s.ids, 0.3);
    const Vec wr = normal_vector(r, s.ids * dd, 0.3), br = normal_vector(r, s.ids, 0.3);
    const auto mean_v = std::make_shared<Affine>(dd, s.ids), mean_r = std::make_shared<Affine>(dd, s.ids);
    for (double& v : mean_v->weight) v = 0.3 * r.normal();
    for (double& v : mean_v->bias) v = 0.3 * r.normal();
    for (double& v : mean_r->weight) v = 0.3 * r.normal();
    for (double& v : mean_r->bias) v = 0.3 * r.normal();
    const std::vector<std::size_t> sizes{s.rows * dd, s.ids * dd, s.ids, s.ids * dd, s.ids};
    auto sid = [=](std::span<const double> t, Vec* g) {
      const auto p = cut(t, sizes);
      std::vector<std::span<double>> gp;
      if (g) gp = cut(std::span<double>(*g), sizes);
      return modality_specific_id_loss(dense_rows(p[0], s.rows, dd), *labels, *mods, affine_of(p[1], p[2], dd, s.ids),
                                       affine_of(p[3], p[4], dd, s.ids), 1.0,
                                       g ? AffineGrad{gp[1], gp[2]} : AffineGrad{},
                                       g ? AffineGrad{gp[3], gp[4]} : AffineGrad{},
                                       g ? dense_rows(gp[0], s.rows, dd) : MutRows{});
    };
    auto ml = [=](std::span<const double> t, Vec* g) {
      const auto p = cut(t, sizes);
      std::vector<std::span<double>> gp;
      if (g) gp = cut(std::span<double>(*g), sizes);
      return modality_learning_loss(dense_rows(p[0], s.rows, dd), *mods, affine_of(p[1], p[2], dd, s.ids),
                                    affine_of(p[3], p[4], dd, s.ids), mean_v->view(), mean_r->view(), 1.0,
                                    g ? AffineGrad{gp[1], gp[2]} : AffineGrad{},
                                    g ? AffineGrad{gp[3], gp[4]} : AffineGrad{},
                                    g ? dense_rows(gp[0], s.rows, dd) : MutRows{});
    };
    const Vec point = concat({&x, &wv, &bv, &wr, &br});
    for (auto [name, fn] : {std::pair{"modality_specific_id_loss", std::function<double(std::span<const double>, Vec*)>(sid)},
                            std::pair{"modality_learning_loss", std::function<double(std::span<const double>, Vec*)>(ml)}})
      ops.push_back({name, point, [fn](std::span<const double> t) { return fn(t, nullptr); },
                     [fn](std::span<const double> t) {
                       Vec g(t.size(), 0.0);
                       fn(t, &g);
                       return g;
                     },
                     {}});
  }
  {  // center-cluster loss; rho sits between two pairwise center distances so both hinge states occur
    Rng r = root.split("center_cluster");
    const Vec x = normal_vector(r, s.rows * dd, 0.5);
    std::vector<Vec> centers(s.rows / 2, Vec(dd, 0.0));
    for (std::size_t i = 0; i < s.rows; ++i)
      for (std::size_t c = 0; c < dd; ++c) centers[i / 2][c] += 0.5 * x[i * dd + c];
    Vec dist;
    for (std::size_t a = 0; a < centers.size(); ++a)
      for (std::size_t b = a + 1; b < centers.size(); ++b) {
        double d2 = 0.0;
        for (std::size_t c = 0; c < dd; ++c) d2 += (centers[a][c] - centers[b][c]) * (centers[a][c] - centers[b][c]);
        dist.push_back(std::sqrt(d2));
      }
    std::sort(dist.begin(), dist.end());
    const double rho = 0.5 * (dist[dist.size() / 2 - 1] + dist[dist.size() / 2]);
    ops.push_back({"center_cluster_loss", x,
                   [=](std::span<const double> t) {
                     return center_cluster_loss(dense_rows(t, s.rows, dd), *labels, rho, 1.0, MutRows{}).value;
                   },
                   [=](std::span<const double> t) {
                     Vec g(t.size(), 0.0);
                     center_cluster_loss(dense_rows(t, s.rows, dd), *labels, rho, 1.0,
                                         dense_rows(std::span<double>(g), s.rows, dd));
                     return g;
                   },
                   {}});
  }
  {  // soft-label identity loss used by the mixing baselines
    Rng r = root.split("soft_label");
    const Vec x = normal_vector(r, s.rows * dd), w = normal_vector(r, s.ids * dd, 0.3), b = normal_vector(r, s.ids, 0.3);
    const auto soft = std::make_shared<std::vector<LabelWeights>>();
    for (std::size_t i = 0; i < s.rows; ++i) {
      const double lam = r.uniform();
      soft->push_back({{static_cast<int>(r.below(s.ids)), lam}, {static_cast<int>(r.below(s.ids)), 1.0 - lam}});
    }
    auto eval = [=](std::span<const double> t, Vec* g) {
      const auto p = cut(t, {s.rows * dd, s.ids * dd, s.ids});
      std::vector<std::span<double>> gp;
      if (g) gp = cut(std::span<double>(*g), {s.rows * dd, s.ids * dd, s.ids});
      return soft_label_id_loss(dense_rows(p[0], s.rows, dd), *soft, affine_of(p[1], p[2], dd, s.ids), 1.0,
                                g ? AffineGrad{gp[1], gp[2]} : AffineGrad{},
                                g ? dense_rows(gp[0], s.rows, dd) : MutRows{});
    };
    ops.push_back({"soft_label_id_loss", concat({&x, &w, &b}),
                   [=](std::span<const double> t) { return eval(t, nullptr); },
                   [=](std::span<const double> t) {
                     Vec g(t.size(), 0.0);
                     eval(t, &g);
                     return g;
                   },
                   {}});
  }
  {  // weighted total of all descriptor-level losses
    Rng r = root.split("total_loss");
    const ModelDims dims{s.cin, s.cf, s.parts, s.ids};
    const auto model = std::make_shared<Model>(Model::initialize(dims, r.split("init")));
    for (auto& v : model->mean_classifier_mut(Modality::visible).weight) v += 0.1 * r.normal();
    for (auto& v : model->mean_classifier_mut(Modality::infrared).weight) v += 0.1 * r.normal();
    const Vec x = normal_vector(r, s.rows * dd, 0.5);
    Vec part_rows;
    for (std::size_t i = 0; i < s.rows; ++i) part_rows.insert(part_rows.end(), x.begin() + static_cast<long>(i * dd + s.cf),
                                                              x.begin() + static_cast<long>((i + 1) * dd));
    const auto anchors = std::make_shared<std::vector<ContrastiveAnchor>>(random_anchors(s, part_rows, r.split("anchors")));
    const std::size_t head_off = model->layout().offset[static_cast<std::size_t>(Block::shared_w)];
    const Vec heads(model->params().begin() + static_cast<long>(head_off), model->params().end());
    const LossWeights weights = cfg.objective.weights;
    const double tau = cfg.objective.tau;
    auto eval = [=](std::span<const double> t, Vec* g) {
      Model m = *model;
      std::copy(t.begin() + static_cast<long>(s.rows * dd), t.end(), m.params().begin() + static_cast<long>(head_off));
      LossInputs in;
      in.descriptors = dense_rows(t.first(s.rows * dd), s.rows, dd);
      in.feature_dim = s.cf;
      in.labels = *labels;
      in.modalities = *mods;
      in.shared = m.shared_classifier();
      in.part = m.part_classifier();
      in.visible = m.modality_classifier(Modality::visible);
      in.infrared = m.modality_classifier(Modality::infrared);
      in.mean_visible = m.mean_classifier(Modality::visible);
      in.mean_infrared = m.mean_classifier(Modality::infrared);
      in.anchors = *anchors;
      in.tau = tau;
      in.rho = 1.0;
      in.include_aid = true;
      in.include_cont = true;
      if (!g) return total_loss(in, weights, nullptr).total;
      Vec full(m.layout().total, 0.0);
      LossSinks sinks{dense_rows(std::span<double>(*g).first(s.rows * dd), s.rows, dd),
                      m.grad_view(full, Block::shared_w), m.grad_view(full, Block::part_w),
                      m.grad_view(full, Block::visible_w), m.grad_view(full, Block::infrared_w)};
      const double v = total_loss(in, weights, &sinks).total;
      std::copy(full.begin() + static_cast<long>(head_off), full.end(), g->begin() + static_cast<long>(s.rows * dd));
      return v;
    };
    ops.push_back({"total_loss", concat({&x, &heads}), [=](std::span<const double> t) { return eval(t, nullptr); },
                   [=](std::span<const double> t) {
                     Vec g(t.size(), 0.0);
                     eval(t, &g);
                     return g;
                   },
                   {}});
  }
  {  // end-to-end objective per regularizer family on a two-identity batch
    Rng r = root.split("objective");
    DatasetSpec spec = cfg.dataset;
    spec.num_train_ids = 4;
    spec.num_test_ids = 2;
    spec.images_per_id_per_modality = 2;
    const auto split = std::make_shared<DatasetSplit>(generate_dataset(spec, r.split("data")()));
    const auto batch =
        std::make_shared<std::vector<PersonImage>>(sample_minibatch(split->train, 2, 4, r.split("batch")()).images);
    ModelDims dims = cfg.model_dims();
    dims.num_ids = spec.num_train_ids;
    const Model base = Model::initialize(dims, r.split("init"));
    struct Variant {
      const char* name;
      Regularizer reg;
      bool full;
      int layer;  // -1 keep, otherwise forced MixLayer
    };
    for (const Variant v : {Variant{"objective_warmup", Regularizer::partmix, false, -1},
                            Variant{"objective_partmix", Regularizer::partmix, true, -1},
                            Variant{"objective_mixup", Regularizer::mixup, true, -1},
                            Variant{"objective_manifold_post_embed", Regularizer::manifold_mixup, true,
                                    static_cast<int>(MixLayer::post_embed)},
                            Variant{"objective_cutmix", Regularizer::cutmix, true, -1}}) {
      ObjectiveConfig ocfg = cfg.objective;
      ocfg.regularizer = v.reg;
      ocfg.full_phase = v.full;
      const auto model = std::make_shared<Model>(base);
      auto plan = std::make_shared<BatchPlan>(plan_batch_serial(*model, *batch, ocfg, r.split(v.name)));
      if (v.layer >= 0)
        for (auto& m : plan->mixes) m.layer = static_cast<MixLayer>(v.layer);
      auto with = [=](std::span<const double> t) {
        Model m = *model;
        std::copy(t.begin(), t.end(), m.params().begin());
        return m;
      };
      ops.push_back({v.name, Vec(model->params().begin(), model->params().end()),
                     [=](std::span<const double> t) {
                       return evaluate_objective(with(t), *batch, *plan, ocfg, {}).total;
                     },
                     [=](std::span<const double> t) {
                       Vec g(t.size(), 0.0);
                       evaluate_objective(with(t), *batch, *plan, ocfg, g);
                       return g;
                     },
                     block_coordinates(model->layout(), 8, r.split(v.name).split("coords"))});
    }
  }
  return ops;
}

GradcheckReport run_gradcheck(const ExperimentConfig& cfg, std::size_t trials, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  GradcheckReport report;
  for (std::size_t t = 0; t < trials; ++t)
    for (const auto& op : gradcheck_ops(cfg, t, seed)) report.entries.push_back(check_op(op, t));
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace partmix
