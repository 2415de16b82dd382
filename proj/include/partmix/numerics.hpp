#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace partmix {

/// Dense row-major tensor of 64-bit reals.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> extents);
  Tensor(std::vector<std::size_t> extents, std::vector<double> values);

  static std::size_t element_count(const std::vector<std::size_t>& extents);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::span<double> span() { return data; }
  std::span<const double> span() const { return data; }
  bool all_finite() const;
};

/// Strided row view into a row-major buffer: row i is
/// data[i * stride + offset, i * stride + offset + cols).
template <class T>
struct RowView {
  std::span<T> data;
  std::size_t rows = 0;
  std::size_t stride = 0;
  std::size_t offset = 0;
  std::size_t cols = 0;

  std::span<T> row(std::size_t i) const { return data.subspan(i * stride + offset, cols); }
};
using ConstRows = RowView<const double>;
using MutRows = RowView<double>;

inline ConstRows dense_rows(std::span<const double> data, std::size_t rows, std::size_t cols) {
  return {data, rows, cols, 0, cols};
}
inline MutRows dense_rows(std::span<double> data, std::size_t rows, std::size_t cols) {
  return {data, rows, cols, 0, cols};
}

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);
/// log(sum(exp(x))) with max subtraction. Empty input gives -inf.
double log_sum_exp(std::span<const double> x);

/// Probabilities below this are clamped before taking logs.
inline constexpr double kProbabilityFloor = 1e-12;

/// Entropy in nats; 0 ln 0 is taken as 0.
double shannon_entropy(std::span<const double> p);
/// KL(p || q); q is clamped at kProbabilityFloor wherever p > 0.
double kl_divergence(std::span<const double> p, std::span<const double> q);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Accumulates scale * d cos(a, b) / da into grad_a and likewise for b.
/// Either gradient span may be empty to skip it. Returns cos(a, b).
double cosine_backward(std::span<const double> a, std::span<const double> b, double scale,
                       std::span<double> grad_a, std::span<double> grad_b);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t coordinates_checked = 0;
};

using ScalarFunction = std::function<double(std::span<const double>)>;

/// Compares analytic against central-difference gradients, coordinate by
/// coordinate. Relative error uses max(|analytic|, |numeric|, 1e-8) as the
/// denominator. When `coordinates` is empty every coordinate is checked.
GradCheckResult fd_gradient_check(const ScalarFunction& f, std::span<const double> params,
                                  std::span<const double> analytic, double step,
                                  std::span<const std::size_t> coordinates = {});

struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  long step_count = 0;
  double lr = 3.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  AdamState(std::size_t size, double lr, double beta1 = 0.9, double beta2 = 0.999,
            double eps = 1e-8);
};

/// One bias-corrected Adam update, in place.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state);

}  // namespace partmix
