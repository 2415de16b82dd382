#include "partmix/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "partmix/errors.hpp"

namespace partmix {

void LossWeights::validate() const {
  for (double v : {sid, ml, aid, cont})
    if (!std::isfinite(v) || v < 0.0) throw ValidationError("loss weights must be finite and >= 0");
}

namespace {

bool has(const MutRows& r) { return r.rows > 0; }

void check_label(int y, std::size_t classes) {
  if (y < 0 || static_cast<std::size_t>(y) >= classes)
    throw ValidationError("label " + std::to_string(y) + " out of range [0, " + std::to_string(classes) + ")");
}

// -log softmax(W x + b)[y]; accumulates scale * gradient.
double cross_entropy_row(const AffineView& c, std::span<const double> x, int y, double scale, const AffineGrad& grad,
                         std::span<double> d_x) {
  check_label(y, c.out);
  const auto logits = affine_apply(c, x);
  const auto logp = log_softmax(logits);
  const double loss = -logp[static_cast<std::size_t>(y)];
  if (!grad.weight.empty() || !d_x.empty()) {
    std::vector<double> dz(c.out);
    for (std::size_t k = 0; k < c.out; ++k) dz[k] = scale * std::exp(logp[k]);
    dz[static_cast<std::size_t>(y)] -= scale;
    affine_backward(c, x, dz, grad, d_x);
  }
  return loss;
}

// Mean cross-entropy over the listed rows.
double mean_cross_entropy(const AffineView& c, ConstRows x, std::span<const int> labels,
                          const std::vector<std::size_t>& rows, double scale, const AffineGrad& grad, MutRows d_x) {
  if (rows.empty()) return 0.0;
  const double inv = 1.0 / static_cast<double>(rows.size());
  double total = 0.0;
  for (std::size_t i : rows)
    total += cross_entropy_row(c, x.row(i), labels[i], scale * inv, grad,
                               has(d_x) ? d_x.row(i) : std::span<double>{});
  return total * inv;
}

std::vector<std::size_t> rows_of(std::span<const Modality> modalities, Modality m) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < modalities.size(); ++i)
    if (modalities[i] == m) out.push_back(i);
  return out;
}

void check_rows(ConstRows x, std::size_t n, const char* what) {
  if (x.rows != n) throw ShapeError(std::string(what) + ": row count does not match labels");
}

}  // namespace

ContrastiveTerm contrastive_term(std::span<const double> s_pos, std::span<const double> s_neg, double tau) {
  if (!(tau > 0.0)) throw ValidationError("contrastive: tau must be > 0");
  if (s_pos.empty()) throw ValidationError("contrastive: positive set is empty");
  std::vector<double> pos(s_pos.size()), all;
  for (std::size_t j = 0; j < s_pos.size(); ++j) pos[j] = s_pos[j] / tau;
  all = pos;
  for (double s : s_neg) all.push_back(s / tau);
  const double lse_pos = log_sum_exp(pos);
  const double lse_all = log_sum_exp(all);
  ContrastiveTerm t;
  t.value = lse_all - lse_pos;
  t.d_positive.resize(s_pos.size());
  t.d_negative.resize(s_neg.size());
  for (std::size_t j = 0; j < s_pos.size(); ++j)
    t.d_positive[j] = (std::exp(all[j] - lse_all) - std::exp(pos[j] - lse_pos)) / tau;
  for (std::size_t k = 0; k < s_neg.size(); ++k)
    t.d_negative[k] = std::exp(all[s_pos.size() + k] - lse_all) / tau;
  return t;
}

ContrastiveResult contrastive_loss(ConstRows parts, std::size_t part_dim, std::span<const ContrastiveAnchor> anchors,
                                   double tau, double scale, MutRows d_parts) {
  if (!(tau > 0.0)) throw ValidationError("contrastive: tau must be > 0");
  ContrastiveResult result;
  std::vector<double> d_b(parts.cols);
  for (const auto& a : anchors) {
    if (a.banks.positives.empty()) {
      ++result.skipped;
      continue;
    }
    if (a.anchor >= parts.rows) throw ShapeError("contrastive: anchor row out of range");
    const auto anchor = parts.row(a.anchor);
    const PartDescriptorSet anchor_set(part_dim, std::vector<double>(anchor.begin(), anchor.end()));

    std::vector<PartDescriptorSet> rebuilt;
    std::vector<const MixedSample*> samples;
    for (const auto* list : {&a.banks.positives, &a.banks.negatives})
      for (const auto& s : *list) {
        if (s.anchor_index != a.anchor || s.donor_index >= parts.rows)
          throw ShapeError("contrastive: sample provenance does not match the batch");
        const auto donor = parts.row(s.donor_index);
        rebuilt.push_back(replay_mix(anchor_set, PartDescriptorSet(part_dim, {donor.begin(), donor.end()}),
                                     s.replaced_slots));
        samples.push_back(&s);
      }
    const std::size_t n_pos = a.banks.positives.size();
    std::vector<double> sims(rebuilt.size());
    for (std::size_t j = 0; j < rebuilt.size(); ++j) sims[j] = cosine_similarity(anchor, rebuilt[j].concat());
    const auto term = contrastive_term(std::span(sims).first(n_pos), std::span(sims).subspan(n_pos), tau);
    result.value += term.value;
    ++result.anchors_used;
    if (!has(d_parts)) continue;

    for (std::size_t j = 0; j < rebuilt.size(); ++j) {
      const double ds = j < n_pos ? term.d_positive[j] : term.d_negative[j - n_pos];
      std::fill(d_b.begin(), d_b.end(), 0.0);
      cosine_backward(anchor, rebuilt[j].concat(), scale * ds, d_parts.row(a.anchor), d_b);
      // Route each slot of b back to where it was copied from.
      std::vector<std::ptrdiff_t> source(anchor_set.count(), -1);
      for (const auto& sp : samples[j]->replaced_slots) source[sp.u] = static_cast<std::ptrdiff_t>(sp.h);
      for (std::size_t k = 0; k < source.size(); ++k) {
        const bool from_donor = source[k] >= 0;
        auto dst = d_parts.row(from_donor ? samples[j]->donor_index : a.anchor)
                       .subspan((from_donor ? static_cast<std::size_t>(source[k]) : k) * part_dim, part_dim);
        for (std::size_t c = 0; c < part_dim; ++c) dst[c] += d_b[k * part_dim + c];
      }
    }
  }
  return result;
}

double contrastive_loss(std::span<const std::pair<PartDescriptorSet, MinedBanks>> anchors, double tau) {
  double total = 0.0;
  for (const auto& [anchor, banks] : anchors) {
    if (banks.positives.empty()) continue;
    std::vector<double> pos, neg;
    for (const auto& s : banks.positives) pos.push_back(cosine_similarity(anchor.concat(), s.parts.concat()));
    for (const auto& s : banks.negatives) neg.push_back(cosine_similarity(anchor.concat(), s.parts.concat()));
    total += contrastive_term(pos, neg, tau).value;
  }
  return total;
}

double part_id_loss(ConstRows parts, std::span<const int> labels, const AffineView& part_classifier, double scale,
                    const AffineGrad& grad, MutRows d_parts) {
  check_rows(parts, labels.size(), "part_id_loss");
  std::vector<std::size_t> rows(parts.rows);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return mean_cross_entropy(part_classifier, parts, labels, rows, scale, grad, d_parts);
}

double id_loss(ConstRows descriptors, std::span<const int> labels, std::span<const Modality> modalities,
               const AffineView& shared, double scale, const AffineGrad& grad, MutRows d_desc) {
  check_rows(descriptors, labels.size(), "id_loss");
  double total = 0.0;
  for (Modality m : {Modality::visible, Modality::infrared})
    total += mean_cross_entropy(shared, descriptors, labels, rows_of(modalities, m), scale, grad, d_desc);
  return total;
}

double modality_specific_id_loss(ConstRows descriptors, std::span<const int> labels,
                                 std::span<const Modality> modalities, const AffineView& visible,
                                 const AffineView& infrared, double scale, const AffineGrad& grad_visible,
                                 const AffineGrad& grad_infrared, MutRows d_desc) {
  check_rows(descriptors, labels.size(), "modality_specific_id_loss");
  return mean_cross_entropy(visible, descriptors, labels, rows_of(modalities, Modality::visible), scale,
                            grad_visible, d_desc) +
         mean_cross_entropy(infrared, descriptors, labels, rows_of(modalities, Modality::infrared), scale,
                            grad_infrared, d_desc);
}

double modality_learning_loss(ConstRows descriptors, std::span<const Modality> modalities, const AffineView& visible,
                              const AffineView& infrared, const AffineView& mean_visible,
                              const AffineView& mean_infrared, double scale, const AffineGrad& grad_visible,
                              const AffineGrad& grad_infrared, MutRows d_desc) {
  if (descriptors.rows != modalities.size()) throw ShapeError("modality_learning_loss: row count mismatch");
  if (mean_visible.in != visible.in || mean_visible.out != visible.out || mean_infrared.in != infrared.in ||
      mean_infrared.out != infrared.out)
    throw ShapeError("modality_learning_loss: mean classifier shape mismatch");
  double total = 0.0;
  const AffineGrad no_grad{};
  for (std::size_t i = 0; i < descriptors.rows; ++i) {
    const bool vis = modalities[i] == Modality::visible;
    const AffineView& live = vis ? visible : infrared;
    const AffineView& target = vis ? mean_infrared : mean_visible;
    const auto x = descriptors.row(i);
    const auto logp = log_softmax(affine_apply(live, x));
    const auto logq = log_softmax(affine_apply(target, x));
    double kl = 0.0;
    for (std::size_t k = 0; k < logp.size(); ++k) kl += std::exp(logp[k]) * (logp[k] - logq[k]);
    total += kl;
    const AffineGrad& g = vis ? grad_visible : grad_infrared;
    const auto dx = has(d_desc) ? d_desc.row(i) : std::span<double>{};
    if (g.weight.empty() && dx.empty()) continue;
    // dKL/dz_p = p (log p - log q - KL); dKL/dz_q = q - p.
    std::vector<double> dz_p(logp.size()), dz_q(logp.size());
    for (std::size_t k = 0; k < logp.size(); ++k) {
      const double p = std::exp(logp[k]);
      dz_p[k] = scale * p * (logp[k] - logq[k] - kl);
      dz_q[k] = scale * (std::exp(logq[k]) - p);
    }
    affine_backward(live, x, dz_p, g, dx);
    if (!dx.empty()) affine_backward(target, x, dz_q, no_grad, dx);
  }
  return total;
}

CenterClusterResult center_cluster_loss(ConstRows descriptors, std::span<const int> labels, double rho, double scale,
                                        MutRows d_desc) {
  check_rows(descriptors, labels.size(), "center_cluster_loss");
  if (!std::isfinite(rho)) throw ValidationError("center_cluster_loss: rho must be finite");
  CenterClusterResult r;
  const std::size_t n = descriptors.rows, dim = descriptors.cols;
  if (n == 0) return r;
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[labels[i]].push_back(i);
  std::vector<int> ids;
  std::vector<std::vector<double>> centers;
  for (const auto& [id, rows] : groups) {
    std::vector<double> z(dim, 0.0);
    for (std::size_t i : rows) {
      const auto x = descriptors.row(i);
      for (std::size_t c = 0; c < dim; ++c) z[c] += x[c];
    }
    for (double& v : z) v /= static_cast<double>(rows.size());
    ids.push_back(id);
    centers.push_back(std::move(z));
  }
  const std::size_t p = ids.size();
  std::vector<std::vector<double>> d_center(p, std::vector<double>(dim, 0.0));
  const double inv_n = 1.0 / static_cast<double>(n);

  // Pull term.
  std::vector<double> e(dim);
  for (std::size_t g = 0; g < p; ++g) {
    const auto& rows = groups[ids[g]];
    for (std::size_t i : rows) {
      const auto x = descriptors.row(i);
      for (std::size_t c = 0; c < dim; ++c) e[c] = x[c] - centers[g][c];
      const double len = norm(e);
      r.pull += len;
      if (!has(d_desc) || len == 0.0) continue;
      auto dx = d_desc.row(i);
      for (std::size_t c = 0; c < dim; ++c) {
        const double u = scale * inv_n * e[c] / len;
        dx[c] += u;
        d_center[g][c] -= u;
      }
    }
  }
  r.pull *= inv_n;

  // Push term over center pairs.
  if (p < 2) {
    r.single_identity = true;
  } else {
    const double coef = 2.0 / (static_cast<double>(p) * static_cast<double>(p - 1));
    for (std::size_t k = 0; k + 1 < p; ++k)
      for (std::size_t l = k + 1; l < p; ++l) {
        for (std::size_t c = 0; c < dim; ++c) e[c] = centers[k][c] - centers[l][c];
        const double dist = norm(e);
        const double slack = rho - dist;
        if (slack <= 0.0) continue;
        r.push += coef * slack;
        if (!has(d_desc) || dist == 0.0) continue;
        for (std::size_t c = 0; c < dim; ++c) {
          const double g = scale * coef * e[c] / dist;
          d_center[k][c] -= g;
          d_center[l][c] += g;
        }
      }
  }
  r.value = r.pull + r.push;

  if (has(d_desc))
    for (std::size_t g = 0; g < p; ++g) {
      const auto& rows = groups[ids[g]];
      const double share = 1.0 / static_cast<double>(rows.size());
      for (std::size_t i : rows) {
        auto dx = d_desc.row(i);
        for (std::size_t c = 0; c < dim; ++c) dx[c] += share * d_center[g][c];
      }
    }
  return r;
}

double soft_label_id_loss(ConstRows descriptors, std::span<const LabelWeights> labels, const AffineView& shared,
                          double scale, const AffineGrad& grad, MutRows d_desc) {
  if (descriptors.rows != labels.size()) throw ShapeError("soft_label_id_loss: row count mismatch");
  if (labels.empty()) return 0.0;
  const double inv = 1.0 / static_cast<double>(labels.size());
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto x = descriptors.row(i);
    const auto logp = log_softmax(affine_apply(shared, x));
    // d/dz of -sum_c w_c log p_c = (sum_c w_c) p - w
    double wsum = 0.0;
    for (const auto& [y, wt] : labels[i]) {
      check_label(y, shared.out);
      total -= inv * wt * logp[static_cast<std::size_t>(y)];
      wsum += wt;
    }
    std::vector<double> dz(shared.out);
    for (std::size_t k = 0; k < shared.out; ++k) dz[k] = scale * inv * wsum * std::exp(logp[k]);
    for (const auto& [y, wt] : labels[i]) dz[static_cast<std::size_t>(y)] -= scale * inv * wt;
    affine_backward(shared, x, dz, grad, has(d_desc) ? d_desc.row(i) : std::span<double>{});
  }
  return total;
}

LossBreakdown total_loss(const LossInputs& in, const LossWeights& w, const LossSinks* sinks) {
  w.validate();
  const std::size_t n = in.descriptors.rows;
  if (in.labels.size() != n || in.modalities.size() != n) throw ShapeError("total_loss: label count mismatch");
  static const MutRows none{};
  const MutRows d_desc = sinks ? sinks->d_desc : none;
  const AffineGrad g0{};
  const AffineGrad& g_shared = sinks ? sinks->shared : g0;
  const AffineGrad& g_part = sinks ? sinks->part : g0;
  const AffineGrad& g_vis = sinks ? sinks->visible : g0;
  const AffineGrad& g_ir = sinks ? sinks->infrared : g0;

  const std::size_t cf = in.feature_dim;
  const ConstRows parts{in.descriptors.data, n, in.descriptors.stride, in.descriptors.offset + cf,
                        in.descriptors.cols - cf};
  const MutRows d_parts = has(d_desc) ? MutRows{d_desc.data, n, d_desc.stride, d_desc.offset + cf, d_desc.cols - cf}
                                      : none;

  LossBreakdown b;
  b.id = id_loss(in.descriptors, in.labels, in.modalities, in.shared, 1.0, g_shared, d_desc);
  const auto cc = center_cluster_loss(in.descriptors, in.labels, in.rho, 1.0, d_desc);
  b.cc = cc.value;
  b.single_identity = cc.single_identity;
  b.sid = modality_specific_id_loss(in.descriptors, in.labels, in.modalities, in.visible, in.infrared, w.sid, g_vis,
                                    g_ir, d_desc);
  b.ml = modality_learning_loss(in.descriptors, in.modalities, in.visible, in.infrared, in.mean_visible,
                                in.mean_infrared, w.ml, g_vis, g_ir, d_desc);
  b.total = b.id + b.cc + w.sid * b.sid + w.ml * b.ml;
  if (in.include_aid) {
    b.aid = part_id_loss(parts, in.labels, in.part, w.aid, g_part, d_parts);
    b.aid_evaluated = true;
    b.total += w.aid * b.aid;
  }
  if (in.include_cont) {
    const auto c = contrastive_loss(parts, cf, in.anchors, in.tau, w.cont, d_parts);
    b.cont = c.value;
    b.cont_evaluated = true;
    b.contrastive_anchors = c.anchors_used;
    b.contrastive_skipped = c.skipped;
    b.total += w.cont * b.cont;
  }
  return b;
}

}  // namespace partmix
