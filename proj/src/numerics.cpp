#include "partmix/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "partmix/errors.hpp"

namespace partmix {

namespace {

void require_finite(std::span<const double> x, const char* what) {
  for (double v : x)
    if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite input");
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> extents)
    : shape(std::move(extents)), data(element_count(shape), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> extents, std::vector<double> values)
    : shape(std::move(extents)), data(std::move(values)) {
  if (data.size() != element_count(shape)) throw ShapeError("tensor data does not match shape");
}

std::size_t Tensor::element_count(const std::vector<std::size_t>& extents) {
  std::size_t n = 1;
  for (auto e : extents) n *= e;
  return n;
}

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double log_sum_exp(std::span<const double> x) {
  if (x.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

std::vector<double> softmax(std::span<const double> logits) {
  require_finite(logits, "softmax");
  if (logits.empty()) return {};
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    s += out[i];
  }
  for (double& v : out) v /= s;
  return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  require_finite(logits, "log_softmax");
  const double lse = log_sum_exp(logits);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

double shannon_entropy(std::span<const double> p) {
  double total = 0.0;
  for (double v : p) {
    if (!std::isfinite(v)) throw NumericError("shannon_entropy: non-finite probability");
    if (v < 0.0) throw NumericError("shannon_entropy: negative probability");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) throw NumericError("shannon_entropy: probabilities do not sum to 1");
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(std::max(v, kProbabilityFloor));
  return h;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("kl_divergence: length mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || q[i] < 0.0) throw NumericError("kl_divergence: negative probability");
    if (p[i] > 0.0)
      kl += p[i] * (std::log(std::max(p[i], kProbabilityFloor)) -
                    std::log(std::max(q[i], kProbabilityFloor)));
  }
  return kl;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_similarity: length mismatch");
  const double na = norm(a), nb = norm(b);
  if (!(na > 0.0) || !(nb > 0.0)) throw NumericError("cosine_similarity: zero-norm vector");
  return dot(a, b) / (na * nb);
}

double cosine_backward(std::span<const double> a, std::span<const double> b, double scale,
                       std::span<double> grad_a, std::span<double> grad_b) {
  if (a.size() != b.size()) throw ShapeError("cosine_backward: length mismatch");
  const double na = norm(a), nb = norm(b);
  if (!(na > 0.0) || !(nb > 0.0)) throw NumericError("cosine_backward: zero-norm vector");
  const double inv = 1.0 / (na * nb);
  const double c = dot(a, b) * inv;
  // d/da = b / (|a||b|) - c a / |a|^2
  if (!grad_a.empty()) {
    const double ka = c / (na * na);
    for (std::size_t i = 0; i < a.size(); ++i) grad_a[i] += scale * (b[i] * inv - ka * a[i]);
  }
  if (!grad_b.empty()) {
    const double kb = c / (nb * nb);
    for (std::size_t i = 0; i < b.size(); ++i) grad_b[i] += scale * (a[i] * inv - kb * b[i]);
  }
  return c;
}

GradCheckResult fd_gradient_check(const ScalarFunction& f, std::span<const double> params,
                                  std::span<const double> analytic, double step,
                                  std::span<const std::size_t> coordinates) {
  if (params.size() != analytic.size()) throw ShapeError("fd_gradient_check: gradient length mismatch");
  std::vector<double> theta(params.begin(), params.end());
  GradCheckResult result;
  auto check_one = [&](std::size_t i) {
    const double saved = theta[i];
    theta[i] = saved + step;
    const double up = f(theta);
    theta[i] = saved - step;
    const double down = f(theta);
    theta[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericError("fd_gradient_check: non-finite function value");
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    if (result.coordinates_checked == 0 || rel > result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst_index = i;
    }
    ++result.coordinates_checked;
  };
  if (coordinates.empty()) {
    for (std::size_t i = 0; i < theta.size(); ++i) check_one(i);
  } else {
    for (std::size_t i : coordinates) {
      if (i >= theta.size()) throw ShapeError("fd_gradient_check: coordinate out of range");
      check_one(i);
    }
  }
  return result;
}

AdamState::AdamState(std::size_t size, double lr_, double beta1_, double beta2_, double eps_)
    : first_moment(size, 0.0), second_moment(size, 0.0), lr(lr_), beta1(beta1_), beta2(beta2_), eps(eps_) {}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size() ||
      params.size() != state.second_moment.size())
    throw ShapeError("adam_step: parameter, gradient and moment sizes differ");
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * grads[i];
    v = state.beta2 * v + (1.0 - state.beta2) * grads[i] * grads[i];
    const double m_hat = m / c1;
    const double v_hat = v / c2;
    params[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

}  // namespace partmix
