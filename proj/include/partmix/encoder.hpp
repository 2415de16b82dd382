#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "partmix/dataset.hpp"
#include "partmix/numerics.hpp"
#include "partmix/rng.hpp"

namespace partmix {

struct ModelDims {
  std::size_t in_channels = 3;
  std::size_t feature_dim = 16;
  std::size_t parts = 6;
  std::size_t num_ids = 64;

  std::size_t descriptor_dim() const { return (parts + 1) * feature_dim; }
  std::size_t part_concat_dim() const { return parts * feature_dim; }
  bool operator==(const ModelDims&) const = default;
};

/// Trainable parameter blocks, in the order they are laid out in the flat
/// parameter vector and in params.bin. Encoder blocks come first.
enum class Block : std::size_t {
  embed_w, embed_b, detect_w, detect_b,
  shared_w, shared_b, part_w, part_b,
  visible_w, visible_b, infrared_w, infrared_b,
};
inline constexpr std::size_t kBlockCount = 12;
std::string_view block_name(Block b);

struct ParamLayout {
  std::array<std::size_t, kBlockCount> offset{};
  std::array<std::size_t, kBlockCount> size{};
  std::size_t total = 0;
  std::size_t encoder_size = 0;  // embed + detect blocks, a prefix of the vector

  static ParamLayout make(const ModelDims& dims);
  bool operator==(const ParamLayout&) const = default;
  std::span<double> slice(std::span<double> flat, Block b) const {
    return flat.subspan(offset[static_cast<std::size_t>(b)], size[static_cast<std::size_t>(b)]);
  }
  std::span<const double> slice(std::span<const double> flat, Block b) const {
    return flat.subspan(offset[static_cast<std::size_t>(b)], size[static_cast<std::size_t>(b)]);
  }
};

/// Non-owning affine map y = W x + b, W row-major (out x in).
struct AffineView {
  std::span<const double> weight;
  std::span<const double> bias;
  std::size_t in = 0;
  std::size_t out = 0;
};

/// Owning affine map; used for the EMA-tracked mean classifiers.
struct Affine {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;
  std::vector<double> bias;

  Affine() = default;
  Affine(std::size_t in_dim, std::size_t out_dim)
      : in(in_dim), out(out_dim), weight(in_dim * out_dim, 0.0), bias(out_dim, 0.0) {}
  explicit Affine(const AffineView& v)
      : in(v.in), out(v.out), weight(v.weight.begin(), v.weight.end()), bias(v.bias.begin(), v.bias.end()) {}
  AffineView view() const { return {weight, bias, in, out}; }
  bool operator==(const Affine&) const = default;
};

/// Gradient sink for one affine map.
struct AffineGrad {
  std::span<double> weight;
  std::span<double> bias;
};

struct FeatureMap {
  std::size_t positions = 0;
  std::size_t channels = 0;
  std::vector<double> values;  // positions x channels

  FeatureMap() = default;
  FeatureMap(std::size_t s, std::size_t c) : positions(s), channels(c), values(s * c, 0.0) {}
  std::span<const double> row(std::size_t s) const { return std::span(values).subspan(s * channels, channels); }
  std::span<double> row(std::size_t s) { return std::span(values).subspan(s * channels, channels); }
};

struct PartMaps {
  std::size_t positions = 0;
  std::size_t parts = 0;
  std::vector<double> values;  // positions x parts, each in (0, 1)

  double at(std::size_t s, std::size_t k) const { return values[s * parts + k]; }
};

/// M part descriptors of equal dimension, stored contiguously (part-major).
struct PartDescriptorSet {
  std::size_t dim = 0;
  std::vector<double> values;

  PartDescriptorSet() = default;
  PartDescriptorSet(std::size_t parts, std::size_t d) : dim(d), values(parts * d, 0.0) {}
  PartDescriptorSet(std::size_t d, std::vector<double> v) : dim(d), values(std::move(v)) {}
  std::size_t count() const { return dim == 0 ? 0 : values.size() / dim; }
  std::span<const double> part(std::size_t k) const { return std::span(values).subspan(k * dim, dim); }
  std::span<double> part(std::size_t k) { return std::span(values).subspan(k * dim, dim); }
  std::span<const double> concat() const { return values; }
  bool operator==(const PartDescriptorSet&) const = default;
};

/// d = [g | p(1) | ... | p(M)].
struct PersonDescriptor {
  std::size_t feature_dim = 0;
  std::size_t parts = 0;
  std::vector<double> concatenated;

  std::span<const double> global() const { return std::span(concatenated).first(feature_dim); }
  std::span<const double> part(std::size_t k) const {
    return std::span(concatenated).subspan((k + 1) * feature_dim, feature_dim);
  }
  std::span<const double> parts_concat() const { return std::span(concatenated).subspan(feature_dim); }
  PartDescriptorSet part_set() const;
};

class Model {
 public:
  explicit Model(const ModelDims& dims);

  /// Weights and biases uniform in +-1/sqrt(fan_in); mean classifiers start
  /// as copies of their live counterparts.
  static Model initialize(const ModelDims& dims, Rng rng);

  const ModelDims& dims() const { return dims_; }
  const ParamLayout& layout() const { return layout_; }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  AffineView view(Block weight) const;
  AffineView embedding() const { return view(Block::embed_w); }
  AffineView detector() const { return view(Block::detect_w); }
  AffineView shared_classifier() const { return view(Block::shared_w); }
  AffineView part_classifier() const { return view(Block::part_w); }
  AffineView modality_classifier(Modality m) const {
    return view(m == Modality::visible ? Block::visible_w : Block::infrared_w);
  }
  AffineView mean_classifier(Modality m) const {
    return (m == Modality::visible ? mean_visible_ : mean_infrared_).view();
  }
  Affine& mean_classifier_mut(Modality m) { return m == Modality::visible ? mean_visible_ : mean_infrared_; }

  /// Gradient sink for the affine map whose weight block is `weight`.
  AffineGrad grad_view(std::span<double> grad, Block weight) const;

  /// mean <- momentum * mean + (1 - momentum) * live, for both modalities.
  void update_mean_classifiers(double momentum);

  bool operator==(const Model&) const = default;

 private:
  ModelDims dims_;
  ParamLayout layout_;
  std::vector<double> params_;
  Affine mean_visible_;
  Affine mean_infrared_;
};

std::vector<double> affine_apply(const AffineView& a, std::span<const double> x);
/// Accumulates dW += d_out x^T, db += d_out and (if non-empty) d_x += W^T d_out.
void affine_backward(const AffineView& a, std::span<const double> x, std::span<const double> d_out,
                     const AffineGrad& grad, std::span<double> d_x);

/// Fixed input standardization applied before the embedding: (x - center) / scale.
inline constexpr double kPixelCenter = 0.5;
inline constexpr double kPixelScale = 0.25;

/// Per-position affine + tanh of standardized pixels. Pixels are height x width x channels.
FeatureMap embed(const AffineView& embedding, const Tensor& pixels);
/// Sigmoid of a per-position affine map.
PartMaps detect_parts(const AffineView& detector, const FeatureMap& f);
/// p(k) = (1/S) sum_s m(s,k) f(s,:).
PartDescriptorSet pool_parts(const FeatureMap& f, const PartMaps& m);
std::vector<double> global_pool(const FeatureMap& f);
PersonDescriptor person_descriptor(const FeatureMap& f, const PartDescriptorSet& p);
/// softmax(W d + b)
std::vector<double> classify(const AffineView& c, std::span<const double> d);
void ema_update(Affine& mean, const AffineView& live, double momentum);

// Backward passes. Gradients accumulate into the given sinks.
void embed_backward(const AffineView& embedding, const Tensor& pixels, const FeatureMap& f,
                    const FeatureMap& d_f, const AffineGrad& grad);
/// Returns d f; accumulates detector gradients.
FeatureMap detect_parts_backward(const AffineView& detector, const FeatureMap& f, const PartMaps& m,
                                 std::span<const double> d_m, const AffineGrad& grad);
/// Accumulates into d_f (positions x channels) and d_m (positions x parts).
void pool_parts_backward(const FeatureMap& f, const PartMaps& m, const PartDescriptorSet& d_p,
                         FeatureMap& d_f, std::span<double> d_m);

struct Encoding {
  FeatureMap features;
  PartMaps maps;
  PersonDescriptor descriptor;
};

Encoding encode(const Model& model, const Tensor& pixels);
/// Detector, pooling and descriptor assembly on an existing feature map.
Encoding encode_features(const Model& model, FeatureMap f);

/// Backward through detector and pooling: returns d f, accumulates detector grads.
FeatureMap head_backward(const Model& model, const Encoding& enc, std::span<const double> d_descriptor,
                         std::span<double> grad);

// Batch kernels. The OpenMP versions parallelise over images and are
// bit-identical to the serial references (per-image buffers, ordered reduction).
std::vector<Encoding> encode_batch(const Model& model, std::span<const Tensor* const> pixels);
std::vector<Encoding> encode_batch_serial(const Model& model, std::span<const Tensor* const> pixels);

/// Encoder-parameter gradients for a batch. `d_descriptors` has one row per
/// encoding; `extra_df`, when non-empty, adds a feature-map gradient per item.
void encoder_backward_batch(const Model& model, std::span<const Tensor* const> pixels,
                            std::span<const Encoding> encodings, ConstRows d_descriptors,
                            std::span<const FeatureMap> extra_df, std::span<double> grad);
void encoder_backward_batch_serial(const Model& model, std::span<const Tensor* const> pixels,
                                   std::span<const Encoding> encodings, ConstRows d_descriptors,
                                   std::span<const FeatureMap> extra_df, std::span<double> grad);

std::vector<PersonDescriptor> describe(const Model& model, std::span<const PersonImage> images);

// params.bin: 8-byte magic "PMIXPRM1", uint32 version, uint32 in_channels,
// feature_dim, parts, num_ids, then float64 blocks in Block order followed by
// mean visible W, b and mean infrared W, b. All little-endian.
inline constexpr std::uint32_t kParamsVersion = 1;
void save_params(const Model& model, const std::filesystem::path& file);
Model load_params(const std::filesystem::path& file);

}  // namespace partmix
