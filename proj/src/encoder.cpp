#include "partmix/encoder.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "partmix/errors.hpp"

namespace partmix {

std::string_view block_name(Block b) {
  static constexpr std::array<std::string_view, kBlockCount> names = {
      "embed_w", "embed_b", "detect_w", "detect_b", "shared_w", "shared_b",
      "part_w", "part_b", "visible_w", "visible_b", "infrared_w", "infrared_b"};
  return names[static_cast<std::size_t>(b)];
}

ParamLayout ParamLayout::make(const ModelDims& d) {
  ParamLayout l;
  const std::size_t desc = d.descriptor_dim();
  const std::array<std::size_t, kBlockCount> sizes = {
      d.feature_dim * d.in_channels, d.feature_dim,
      d.parts * d.feature_dim, d.parts,
      d.num_ids * desc, d.num_ids,
      d.num_ids * d.part_concat_dim(), d.num_ids,
      d.num_ids * desc, d.num_ids,
      d.num_ids * desc, d.num_ids};
  std::size_t off = 0;
  for (std::size_t i = 0; i < kBlockCount; ++i) {
    l.offset[i] = off;
    l.size[i] = sizes[i];
    off += sizes[i];
  }
  l.total = off;
  l.encoder_size = l.offset[static_cast<std::size_t>(Block::shared_w)];
  return l;
}

PartDescriptorSet PersonDescriptor::part_set() const {
  auto p = parts_concat();
  return PartDescriptorSet(feature_dim, std::vector<double>(p.begin(), p.end()));
}

Model::Model(const ModelDims& dims)
    : dims_(dims),
      layout_(ParamLayout::make(dims)),
      params_(layout_.total, 0.0),
      mean_visible_(dims.descriptor_dim(), dims.num_ids),
      mean_infrared_(dims.descriptor_dim(), dims.num_ids) {
  if (dims.in_channels < 1 || dims.feature_dim < 1 || dims.parts < 1 || dims.num_ids < 1)
    throw ValidationError("model: all dimensions must be >= 1");
}

Model Model::initialize(const ModelDims& dims, Rng rng) {
  Model m(dims);
  for (std::size_t b = 0; b < kBlockCount; b += 2) {
    const AffineView v = m.view(static_cast<Block>(b));
    const double bound = 1.0 / std::sqrt(static_cast<double>(v.in));
    Rng stream = rng.split(block_name(static_cast<Block>(b)));
    for (auto span : {m.layout_.slice(std::span<double>(m.params_), static_cast<Block>(b)),
                      m.layout_.slice(std::span<double>(m.params_), static_cast<Block>(b + 1))})
      for (double& x : span) x = stream.uniform(-bound, bound);
  }
  m.mean_visible_ = Affine(m.modality_classifier(Modality::visible));
  m.mean_infrared_ = Affine(m.modality_classifier(Modality::infrared));
  return m;
}

AffineView Model::view(Block weight) const {
  const auto w = static_cast<std::size_t>(weight);
  if (w % 2 != 0) throw ValidationError("model: view() takes a weight block");
  std::size_t in = 0;
  switch (weight) {
    case Block::embed_w: in = dims_.in_channels; break;
    case Block::detect_w: in = dims_.feature_dim; break;
    case Block::part_w: in = dims_.part_concat_dim(); break;
    default: in = dims_.descriptor_dim(); break;
  }
  const std::span<const double> flat = params_;
  return {layout_.slice(flat, weight), layout_.slice(flat, static_cast<Block>(w + 1)), in,
          layout_.size[w + 1]};
}

AffineGrad Model::grad_view(std::span<double> grad, Block weight) const {
  const auto w = static_cast<std::size_t>(weight);
  if (grad.size() != layout_.total) throw ShapeError("model: gradient buffer has the wrong size");
  return {layout_.slice(grad, weight), layout_.slice(grad, static_cast<Block>(w + 1))};
}

void Model::update_mean_classifiers(double momentum) {
  ema_update(mean_visible_, modality_classifier(Modality::visible), momentum);
  ema_update(mean_infrared_, modality_classifier(Modality::infrared), momentum);
}

std::vector<double> affine_apply(const AffineView& a, std::span<const double> x) {
  if (x.size() != a.in) throw ShapeError("affine: input dimension mismatch");
  std::vector<double> y(a.out);
  for (std::size_t o = 0; o < a.out; ++o) {
    const double* w = a.weight.data() + o * a.in;
    double s = a.bias[o];
    for (std::size_t i = 0; i < a.in; ++i) s += w[i] * x[i];
    y[o] = s;
  }
  return y;
}

void affine_backward(const AffineView& a, std::span<const double> x, std::span<const double> d_out,
                     const AffineGrad& grad, std::span<double> d_x) {
  if (x.size() != a.in || d_out.size() != a.out) throw ShapeError("affine_backward: dimension mismatch");
  for (std::size_t o = 0; o < a.out; ++o) {
    const double g = d_out[o];
    if (!grad.bias.empty()) grad.bias[o] += g;
    if (g == 0.0) continue;
    if (!grad.weight.empty()) {
      double* dw = grad.weight.data() + o * a.in;
      for (std::size_t i = 0; i < a.in; ++i) dw[i] += g * x[i];
    }
    if (!d_x.empty()) {
      const double* w = a.weight.data() + o * a.in;
      for (std::size_t i = 0; i < a.in; ++i) d_x[i] += g * w[i];
    }
  }
}

namespace {

void standardize(std::span<const double> px, std::span<double> out) {
  for (std::size_t i = 0; i < px.size(); ++i) out[i] = (px[i] - kPixelCenter) / kPixelScale;
}

}  // namespace

FeatureMap embed(const AffineView& embedding, const Tensor& pixels) {
  if (pixels.rank() != 3 || pixels.shape[2] != embedding.in)
    throw ShapeError("embed: image channels do not match the embedding");
  const std::size_t s_count = pixels.shape[0] * pixels.shape[1];
  FeatureMap f(s_count, embedding.out);
  const std::span<const double> px = pixels.data;
  std::vector<double> x(embedding.in);
  for (std::size_t s = 0; s < s_count; ++s) {
    standardize(px.subspan(s * embedding.in, embedding.in), x);
    auto out = f.row(s);
    for (std::size_t c = 0; c < embedding.out; ++c) {
      const double* w = embedding.weight.data() + c * embedding.in;
      double z = embedding.bias[c];
      for (std::size_t i = 0; i < embedding.in; ++i) z += w[i] * x[i];
      out[c] = std::tanh(z);
    }
  }
  return f;
}

PartMaps detect_parts(const AffineView& detector, const FeatureMap& f) {
  if (f.channels != detector.in) throw ShapeError("detect_parts: feature width mismatch");
  PartMaps m{f.positions, detector.out, std::vector<double>(f.positions * detector.out)};
  for (std::size_t s = 0; s < f.positions; ++s) {
    const auto x = f.row(s);
    for (std::size_t k = 0; k < detector.out; ++k) {
      const double* w = detector.weight.data() + k * detector.in;
      double a = detector.bias[k];
      for (std::size_t c = 0; c < detector.in; ++c) a += w[c] * x[c];
      // Clamp the logit so the sigmoid stays strictly inside (0, 1) in float64.
      a = std::clamp(a, -36.0, 36.0);
      m.values[s * m.parts + k] = 1.0 / (1.0 + std::exp(-a));
    }
  }
  return m;
}

PartDescriptorSet pool_parts(const FeatureMap& f, const PartMaps& m) {
  if (f.positions != m.positions) throw ShapeError("pool_parts: spatial size mismatch");
  PartDescriptorSet p(m.parts, f.channels);
  const double s_count = static_cast<double>(f.positions);
  for (std::size_t k = 0; k < m.parts; ++k) {
    auto out = p.part(k);
    for (std::size_t s = 0; s < f.positions; ++s) {
      const double w = m.at(s, k);
      const auto x = f.row(s);
      for (std::size_t c = 0; c < f.channels; ++c) out[c] += w * x[c];
    }
    for (double& v : out) v /= s_count;
  }
  return p;
}

std::vector<double> global_pool(const FeatureMap& f) {
  std::vector<double> g(f.channels, 0.0);
  for (std::size_t s = 0; s < f.positions; ++s) {
    const auto x = f.row(s);
    for (std::size_t c = 0; c < f.channels; ++c) g[c] += x[c];
  }
  for (double& v : g) v /= static_cast<double>(f.positions);
  return g;
}

PersonDescriptor person_descriptor(const FeatureMap& f, const PartDescriptorSet& p) {
  if (p.dim != f.channels) throw ShapeError("person_descriptor: part dimension mismatch");
  PersonDescriptor d;
  d.feature_dim = f.channels;
  d.parts = p.count();
  d.concatenated = global_pool(f);
  d.concatenated.insert(d.concatenated.end(), p.values.begin(), p.values.end());
  return d;
}

std::vector<double> classify(const AffineView& c, std::span<const double> d) {
  return softmax(affine_apply(c, d));
}

void ema_update(Affine& mean, const AffineView& live, double momentum) {
  if (mean.in != live.in || mean.out != live.out) throw ShapeError("ema_update: shape mismatch");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("ema_update: momentum must lie in [0, 1)");
  for (std::size_t i = 0; i < mean.weight.size(); ++i)
    mean.weight[i] = momentum * mean.weight[i] + (1.0 - momentum) * live.weight[i];
  for (std::size_t i = 0; i < mean.bias.size(); ++i)
    mean.bias[i] = momentum * mean.bias[i] + (1.0 - momentum) * live.bias[i];
}

void embed_backward(const AffineView& embedding, const Tensor& pixels, const FeatureMap& f,
                    const FeatureMap& d_f, const AffineGrad& grad) {
  const std::span<const double> px = pixels.data;
  std::vector<double> dz(f.channels), x(embedding.in);
  for (std::size_t s = 0; s < f.positions; ++s) {
    const auto y = f.row(s);
    const auto dy = d_f.row(s);
    for (std::size_t c = 0; c < f.channels; ++c) dz[c] = dy[c] * (1.0 - y[c] * y[c]);
    standardize(px.subspan(s * embedding.in, embedding.in), x);
    affine_backward(embedding, x, dz, grad, {});
  }
}

FeatureMap detect_parts_backward(const AffineView& detector, const FeatureMap& f, const PartMaps& m,
                                 std::span<const double> d_m, const AffineGrad& grad) {
  FeatureMap d_f(f.positions, f.channels);
  std::vector<double> da(m.parts);
  for (std::size_t s = 0; s < f.positions; ++s) {
    for (std::size_t k = 0; k < m.parts; ++k) {
      const double mv = m.at(s, k);
      da[k] = d_m[s * m.parts + k] * mv * (1.0 - mv);
    }
    affine_backward(detector, f.row(s), da, grad, d_f.row(s));
  }
  return d_f;
}

void pool_parts_backward(const FeatureMap& f, const PartMaps& m, const PartDescriptorSet& d_p,
                         FeatureMap& d_f, std::span<double> d_m) {
  const double inv_s = 1.0 / static_cast<double>(f.positions);
  for (std::size_t s = 0; s < f.positions; ++s) {
    const auto x = f.row(s);
    auto dx = d_f.row(s);
    for (std::size_t k = 0; k < m.parts; ++k) {
      const auto dp = d_p.part(k);
      const double w = m.at(s, k);
      double dm = 0.0;
      for (std::size_t c = 0; c < f.channels; ++c) {
        dx[c] += inv_s * w * dp[c];
        dm += x[c] * dp[c];
      }
      d_m[s * m.parts + k] += inv_s * dm;
    }
  }
}

Encoding encode_features(const Model& model, FeatureMap f) {
  Encoding e;
  e.maps = detect_parts(model.detector(), f);
  e.descriptor = person_descriptor(f, pool_parts(f, e.maps));
  e.features = std::move(f);
  return e;
}

Encoding encode(const Model& model, const Tensor& pixels) {
  return encode_features(model, embed(model.embedding(), pixels));
}

FeatureMap head_backward(const Model& model, const Encoding& enc, std::span<const double> d_descriptor,
                         std::span<double> grad) {
  const auto& f = enc.features;
  const std::size_t cf = f.channels;
  if (d_descriptor.size() != enc.descriptor.concatenated.size())
    throw ShapeError("head_backward: descriptor gradient size mismatch");
  FeatureMap d_f(f.positions, cf);
  const double inv_s = 1.0 / static_cast<double>(f.positions);
  for (std::size_t s = 0; s < f.positions; ++s) {
    auto dx = d_f.row(s);
    for (std::size_t c = 0; c < cf; ++c) dx[c] = inv_s * d_descriptor[c];
  }
  PartDescriptorSet d_p(cf, std::vector<double>(d_descriptor.begin() + static_cast<long>(cf), d_descriptor.end()));
  std::vector<double> d_m(f.positions * enc.maps.parts, 0.0);
  pool_parts_backward(f, enc.maps, d_p, d_f, d_m);
  const auto& layout = model.layout();
  if (grad.size() < layout.encoder_size) throw ShapeError("head_backward: gradient buffer too small");
  const FeatureMap via_maps = detect_parts_backward(
      model.detector(), f, enc.maps, d_m,
      {layout.slice(grad, Block::detect_w), layout.slice(grad, Block::detect_b)});
  for (std::size_t i = 0; i < d_f.values.size(); ++i) d_f.values[i] += via_maps.values[i];
  return d_f;
}

std::vector<Encoding> encode_batch_serial(const Model& model, std::span<const Tensor* const> pixels) {
  std::vector<Encoding> out(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) out[i] = encode(model, *pixels[i]);
  return out;
}

std::vector<Encoding> encode_batch(const Model& model, std::span<const Tensor* const> pixels) {
  std::vector<Encoding> out(pixels.size());
  const auto n = static_cast<std::ptrdiff_t>(pixels.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = encode(model, *pixels[static_cast<std::size_t>(i)]);
  return out;
}

namespace {

// Gradient of one item w.r.t. the encoder parameters; `grad` is the encoder
// prefix of the flat layout.
void item_backward(const Model& model, const Tensor& pixels, const Encoding& enc,
                   std::span<const double> d_desc, const FeatureMap* extra, std::span<double> grad) {
  FeatureMap d_f = head_backward(model, enc, d_desc, grad);
  if (extra != nullptr)
    for (std::size_t j = 0; j < d_f.values.size(); ++j) d_f.values[j] += extra->values[j];
  const auto& layout = model.layout();
  embed_backward(model.embedding(), pixels, enc.features, d_f,
                 {layout.slice(grad, Block::embed_w), layout.slice(grad, Block::embed_b)});
}

void check_batch_args(std::span<const Tensor* const> pixels, std::span<const Encoding> encodings,
                      ConstRows d_desc, std::span<const FeatureMap> extra, std::span<double> grad,
                      const Model& model) {
  if (pixels.size() != encodings.size() || d_desc.rows != encodings.size() ||
      (!extra.empty() && extra.size() != encodings.size()) || grad.size() != model.layout().total)
    throw ShapeError("encoder_backward_batch: argument sizes disagree");
}

}  // namespace

void encoder_backward_batch_serial(const Model& model, std::span<const Tensor* const> pixels,
                                   std::span<const Encoding> encodings, ConstRows d_desc,
                                   std::span<const FeatureMap> extra, std::span<double> grad) {
  check_batch_args(pixels, encodings, d_desc, extra, grad, model);
  const std::size_t enc_size = model.layout().encoder_size;
  std::vector<double> item(enc_size);
  for (std::size_t i = 0; i < encodings.size(); ++i) {
    std::fill(item.begin(), item.end(), 0.0);
    item_backward(model, *pixels[i], encodings[i], d_desc.row(i), extra.empty() ? nullptr : &extra[i], item);
    for (std::size_t j = 0; j < enc_size; ++j) grad[j] += item[j];
  }
}

void encoder_backward_batch(const Model& model, std::span<const Tensor* const> pixels,
                            std::span<const Encoding> encodings, ConstRows d_desc,
                            std::span<const FeatureMap> extra, std::span<double> grad) {
  check_batch_args(pixels, encodings, d_desc, extra, grad, model);
  const std::size_t enc_size = model.layout().encoder_size;
  const std::size_t n = encodings.size();
  std::vector<double> items(n * enc_size, 0.0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    const auto u = static_cast<std::size_t>(i);
    item_backward(model, *pixels[u], encodings[u], d_desc.row(u), extra.empty() ? nullptr : &extra[u],
                  std::span(items).subspan(u * enc_size, enc_size));
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < enc_size; ++j) grad[j] += items[i * enc_size + j];
}

std::vector<PersonDescriptor> describe(const Model& model, std::span<const PersonImage> images) {
  std::vector<PersonDescriptor> out(images.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(images.size()); ++i)
    out[static_cast<std::size_t>(i)] = encode(model, images[static_cast<std::size_t>(i)].pixels).descriptor;
  return out;
}

namespace {

constexpr char kMagic[8] = {'P', 'M', 'I', 'X', 'P', 'R', 'M', '1'};

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void save_params(const Model& model, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw ValidationError("cannot open " + file.string() + " for writing");
  out.write(kMagic, sizeof kMagic);
  const auto& d = model.dims();
  write_pod<std::uint32_t>(out, kParamsVersion);
  for (std::size_t v : {d.in_channels, d.feature_dim, d.parts, d.num_ids})
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  auto write_block = [&](std::span<const double> b) {
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size() * sizeof(double)));
  };
  write_block(model.params());
  for (Modality m : {Modality::visible, Modality::infrared}) {
    const AffineView mean = model.mean_classifier(m);
    write_block(mean.weight);
    write_block(mean.bias);
  }
  if (!out) throw ValidationError("failed writing " + file.string());
}

Model load_params(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + file.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw ValidationError(file.string() + ": not a params.bin file");
  if (read_pod<std::uint32_t>(in) != kParamsVersion) throw ValidationError(file.string() + ": unsupported version");
  ModelDims d;
  d.in_channels = read_pod<std::uint32_t>(in);
  d.feature_dim = read_pod<std::uint32_t>(in);
  d.parts = read_pod<std::uint32_t>(in);
  d.num_ids = read_pod<std::uint32_t>(in);
  Model model(d);
  auto read_block = [&](std::span<double> b) {
    in.read(reinterpret_cast<char*>(b.data()), static_cast<std::streamsize>(b.size() * sizeof(double)));
  };
  read_block(model.params());
  for (Modality m : {Modality::visible, Modality::infrared}) {
    Affine& mean = model.mean_classifier_mut(m);
    read_block(mean.weight);
    read_block(mean.bias);
  }
  if (!in) throw ValidationError(file.string() + ": truncated parameter data");
  return model;
}

}  // namespace partmix
