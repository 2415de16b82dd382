#include "partmix/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include <Eigen/Dense>

#include "partmix/errors.hpp"
#include "partmix/rng.hpp"

namespace partmix {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

std::string_view to_string(Modality m) { return m == Modality::visible ? "visible" : "infrared"; }

Modality modality_from_string(std::string_view s) {
  if (s == "visible") return Modality::visible;
  if (s == "infrared") return Modality::infrared;
  throw ValidationError("unknown modality '" + std::string(s) + "'");
}

void DatasetSpec::validate() const {
  if (num_train_ids < 1 || images_per_id_per_modality < 1 || parts_gt < 1 || attribute_dim < 1 ||
      height < 1 || width < 1 || channels < 1)
    throw ValidationError("dataset: all counts must be >= 1");
  if (num_test_ids < 2) throw ValidationError("dataset: num_test_ids must be >= 2 for retrieval");
  if (height % parts_gt != 0) throw ValidationError("dataset: height must be divisible by parts_gt");
  if (occlusion_prob < 0.0 || occlusion_prob > 1.0)
    throw ValidationError("dataset: occlusion_prob must lie in [0, 1]");
  if (boundary_jitter < 0) throw ValidationError("dataset: boundary_jitter must be >= 0");
  for (double v : {luminance_scale, chroma_scale, illumination_std, modality_offset_std, noise_std,
                   intensity_jitter})
    if (!std::isfinite(v) || v < 0.0) throw ValidationError("dataset: noise levels must be finite and >= 0");
}

#define PARTMIX_DATASET_FIELDS(X)                                                            \
  X(num_train_ids) X(num_test_ids) X(images_per_id_per_modality) X(parts_gt) X(attribute_dim) \
  X(height) X(width) X(channels) X(luminance_scale) X(chroma_scale) X(illumination_std)       \
  X(modality_offset_std) X(noise_std) X(intensity_jitter) X(boundary_jitter) X(occlusion_prob)

void to_json(nlohmann::json& j, const DatasetSpec& s) {
  j = nlohmann::json::object();
#define X(name) j[#name] = s.name;
  PARTMIX_DATASET_FIELDS(X)
#undef X
}

DatasetSpec dataset_spec_from_json(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  DatasetSpec s;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    const std::string field = path + "." + key;
    bool known = false;
#define X(name)                                                                    \
  if (key == #name) {                                                              \
    known = true;                                                                  \
    try {                                                                          \
      s.name = it.value().get<decltype(s.name)>();                                 \
    } catch (const nlohmann::json::exception& e) {                                 \
      throw ConfigError(field, std::string("wrong type: ") + e.what());            \
    }                                                                              \
  }
    PARTMIX_DATASET_FIELDS(X)
#undef X
    if (!known) throw ConfigError(field, "unknown key");
  }
  try {
    s.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(path, e.what());
  }
  return s;
}

void from_json(const nlohmann::json& j, DatasetSpec& s) { s = dataset_spec_from_json(j, "dataset"); }

double ModalityTransform::condition_number() const {
  const auto n = static_cast<Eigen::Index>(channels);
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> a(
      matrix.data(), n, n);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const auto& sv = svd.singularValues();
  if (sv(n - 1) <= 0.0) return std::numeric_limits<double>::infinity();
  return sv(0) / sv(n - 1);
}

std::vector<const PersonImage*> DatasetSplit::test_images() const {
  std::vector<const PersonImage*> out;
  out.reserve(query.size() + gallery.size());
  for (const auto& im : query) out.push_back(&im);
  for (const auto& im : gallery) out.push_back(&im);
  return out;
}

namespace {

// Orthonormal basis of the plane orthogonal to the luminance axis, as columns
// of a channels x (channels - 1) matrix (Gram-Schmidt on the standard basis).
std::vector<std::vector<double>> chroma_basis(std::size_t c) {
  std::vector<double> w(c, 1.0 / std::sqrt(static_cast<double>(c)));
  std::vector<std::vector<double>> basis;
  for (std::size_t e = 0; e < c && basis.size() + 1 < c; ++e) {
    std::vector<double> v(c, 0.0);
    v[e] = 1.0;
    auto project_out = [&](const std::vector<double>& u) {
      double d = 0.0;
      for (std::size_t i = 0; i < c; ++i) d += v[i] * u[i];
      for (std::size_t i = 0; i < c; ++i) v[i] -= d * u[i];
    };
    project_out(w);
    for (const auto& b : basis) project_out(b);
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n < 1e-9) continue;
    for (double& x : v) x /= n;
    basis.push_back(std::move(v));
  }
  return basis;
}

// Random orthogonal (d x d) matrix via Gram-Schmidt on a Gaussian matrix.
std::vector<double> random_orthogonal(std::size_t d, Rng& rng) {
  std::vector<std::vector<double>> rows;
  while (rows.size() < d) {
    std::vector<double> v(d);
    for (double& x : v) x = rng.normal();
    for (const auto& r : rows) {
      double p = 0.0;
      for (std::size_t i = 0; i < d; ++i) p += v[i] * r[i];
      for (std::size_t i = 0; i < d; ++i) v[i] -= p * r[i];
    }
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n < 1e-6) continue;
    for (double& x : v) x /= n;
    rows.push_back(std::move(v));
  }
  std::vector<double> out;
  for (const auto& r : rows) out.insert(out.end(), r.begin(), r.end());
  return out;
}

std::vector<double> rotation2(double theta) {
  return {std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta)};
}

// T = w w^T + Q O Q^T ; offset = Q n.
ModalityTransform make_transform(std::size_t c, const std::vector<std::vector<double>>& q,
                                 const std::vector<double>& o, std::span<const double> chroma_offset) {
  const std::size_t d = q.size();
  ModalityTransform t;
  t.channels = c;
  t.matrix.assign(c * c, 1.0 / static_cast<double>(c));
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) t.matrix[i * c + j] += q[a][i] * o[a * d + b] * q[b][j];
  t.offset.assign(c, 0.0);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t a = 0; a < d; ++a) t.offset[i] += q[a][i] * chroma_offset[a];
  return t;
}

std::pair<ModalityTransform, ModalityTransform> draw_transforms(const DatasetSpec& spec, Rng rng) {
  const std::size_t c = spec.channels;
  const auto q = chroma_basis(c);
  const std::size_t d = q.size();
  std::vector<double> ov, orr;
  if (d == 2) {
    // Relative chroma rotation of at least a quarter turn between modalities.
    const double base = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double rel = rng.uniform(0.5 * std::numbers::pi, 1.5 * std::numbers::pi);
    ov = rotation2(base);
    orr = rotation2(base + rel);
  } else {
    ov = random_orthogonal(d, rng);
    for (int attempt = 0; attempt < 64; ++attempt) {
      orr = random_orthogonal(d, rng);
      double tr = 0.0;
      for (std::size_t i = 0; i < d * d; ++i) tr += ov[i] * orr[i];
      if (tr <= 0.0) break;
    }
  }
  std::vector<double> nv(d), nr(d);
  for (auto& x : nv) x = rng.normal(0.0, spec.modality_offset_std);
  for (auto& x : nr) x = rng.normal(0.0, spec.modality_offset_std);
  auto tv = make_transform(c, q, ov, nv);
  auto tr = make_transform(c, q, orr, nr);
  if (!(tv.condition_number() < 100.0) || !(tr.condition_number() < 100.0))
    throw NumericError("dataset: modality transform is ill-conditioned");
  return {std::move(tv), std::move(tr)};
}

std::uint64_t nuisance_seed_for(std::uint64_t seed, int identity, Modality m, std::size_t index) {
  Rng r = Rng(seed).split("nuisance").split(static_cast<std::uint64_t>(identity));
  return r.split(static_cast<std::uint64_t>(m)).split(index)();
}

std::vector<PartAttributeProfile> generate_profiles(const DatasetSpec& spec, std::uint64_t seed) {
  Rng prof = Rng(seed).split("profile");
  std::vector<PartAttributeProfile> out;
  for (std::size_t id = 0; id < spec.num_train_ids + spec.num_test_ids; ++id) {
    Rng r = prof.split(id);
    PartAttributeProfile p;
    p.identity = static_cast<int>(id);
    p.attributes.assign(spec.parts_gt, std::vector<double>(spec.attribute_dim));
    for (auto& part : p.attributes)
      for (auto& v : part) v = r.normal();
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

Tensor render_person(const DatasetSpec& spec, const PartAttributeProfile& profile,
                     std::span<const double> projection, const ModalityTransform& transform,
                     std::uint64_t nuisance_seed) {
  const std::size_t h = spec.height, w = spec.width, c = spec.channels, parts = spec.parts_gt,
                    a = spec.attribute_dim;
  if (profile.attributes.size() != parts) throw ShapeError("render_person: profile part count mismatch");
  Rng rng(nuisance_seed);

  // Band colors as offsets from mid-gray: luminance and chroma components of R a.
  const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(c));
  std::vector<double> colors(parts * c);
  for (std::size_t k = 0; k < parts; ++k) {
    std::vector<double> base(c, 0.0);
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < a; ++j) base[i] += projection[i * a + j] * profile.attributes[k][j];
    double lum = 0.0;
    for (double v : base) lum += v * inv_sqrt_c;
    for (std::size_t i = 0; i < c; ++i)
      colors[k * c + i] =
          spec.luminance_scale * lum * inv_sqrt_c + spec.chroma_scale * (base[i] - lum * inv_sqrt_c);
  }

  // Per-image illumination cast in the chroma plane.
  std::vector<double> cast(c);
  for (auto& v : cast) v = rng.normal(0.0, spec.illumination_std);
  double cast_lum = 0.0;
  for (double v : cast) cast_lum += v * inv_sqrt_c;
  for (auto& v : cast) v -= cast_lum * inv_sqrt_c;

  std::vector<double> scale(parts);
  for (auto& s : scale) s = rng.uniform(1.0 - spec.intensity_jitter, 1.0 + spec.intensity_jitter);

  // Band boundaries with +-jitter rows, never collapsing a band.
  const std::size_t band = h / parts;
  std::vector<std::size_t> start(parts + 1);
  for (std::size_t k = 0; k <= parts; ++k) start[k] = k * band;
  const int jitter = static_cast<int>(std::min<std::size_t>(spec.boundary_jitter, band > 1 ? (band - 1) / 2 : 0));
  for (std::size_t k = 1; k < parts; ++k) {
    const int shift = static_cast<int>(rng.below(static_cast<std::size_t>(2 * jitter + 1))) - jitter;
    start[k] = static_cast<std::size_t>(static_cast<int>(start[k]) + shift);
  }

  std::size_t occluded = parts;  // none
  if (rng.uniform() < spec.occlusion_prob) occluded = rng.below(parts);

  Tensor pixels({h, w, c});
  std::vector<double> delta(c), out(c);
  for (std::size_t k = 0; k < parts; ++k) {
    for (std::size_t i = 0; i < c; ++i) delta[i] = scale[k] * colors[k * c + i] + cast[i];
    for (std::size_t i = 0; i < c; ++i) {
      double v = 0.5 + transform.offset[i];
      for (std::size_t j = 0; j < c; ++j) v += transform.matrix[i * c + j] * delta[j];
      out[i] = v;
    }
    for (std::size_t y = start[k]; y < start[k + 1]; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t i = 0; i < c; ++i) {
          double v = k == occluded ? 0.0 : out[i] + rng.normal(0.0, spec.noise_std);
          pixels.data[(y * w + x) * c + i] = std::clamp(v, 0.0, 1.0);
        }
  }
  return pixels;
}

DatasetSplit generate_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  spec.validate();
  DatasetSplit split;
  split.spec = spec;
  split.seed = seed;
  const Rng root(seed);

  const std::size_t c = spec.channels, a = spec.attribute_dim;
  Rng proj = root.split("projection");
  split.color_projection.resize(c * a);
  for (auto& v : split.color_projection) v = proj.normal(0.0, 1.0 / std::sqrt(static_cast<double>(a)));
  std::tie(split.visible_transform, split.infrared_transform) = draw_transforms(spec, root.split("modality"));

  const std::size_t total_ids = spec.num_train_ids + spec.num_test_ids;
  split.profiles = generate_profiles(spec, seed);
  for (std::size_t id = 0; id < spec.num_train_ids; ++id) split.train_ids.push_back(static_cast<int>(id));
  for (std::size_t id = spec.num_train_ids; id < total_ids; ++id) split.test_ids.push_back(static_cast<int>(id));

  auto make = [&](int id, Modality m, std::size_t index) {
    PersonImage im;
    im.identity = id;
    im.modality = m;
    im.nuisance_seed = nuisance_seed_for(seed, id, m, index);
    im.pixels = render_person(spec, split.profiles[static_cast<std::size_t>(id)], split.color_projection,
                              split.transform(m), im.nuisance_seed);
    return im;
  };
  for (int id : split.train_ids)
    for (Modality m : {Modality::visible, Modality::infrared})
      for (std::size_t n = 0; n < spec.images_per_id_per_modality; ++n) split.train.push_back(make(id, m, n));
  for (int id : split.test_ids)
    for (std::size_t n = 0; n < spec.images_per_id_per_modality; ++n) {
      split.query.push_back(make(id, Modality::visible, n));
      split.gallery.push_back(make(id, Modality::infrared, n));
    }
  return split;
}

MiniBatch sample_minibatch(const std::vector<PersonImage>& train, std::size_t identities,
                           std::size_t images_per_identity, std::uint64_t seed) {
  if (identities < 1) throw ValidationError("sample_minibatch: P must be >= 1");
  if (images_per_identity < 2 || images_per_identity % 2 != 0)
    throw ValidationError("sample_minibatch: K must be even and >= 2");
  const std::size_t half = images_per_identity / 2;

  std::map<int, std::array<std::vector<std::size_t>, 2>> by_id;
  for (std::size_t i = 0; i < train.size(); ++i)
    by_id[train[i].identity][static_cast<std::size_t>(train[i].modality)].push_back(i);
  std::vector<int> eligible;
  for (const auto& [id, lists] : by_id)
    if (lists[0].size() >= half && lists[1].size() >= half) eligible.push_back(id);
  if (eligible.size() < identities)
    throw SamplingError("sample_minibatch: need " + std::to_string(identities) +
                        " identities with enough images per modality, have " + std::to_string(eligible.size()));

  Rng rng(seed);
  MiniBatch batch;
  batch.identities_per_batch = identities;
  batch.images_per_identity = images_per_identity;
  for (std::size_t pick : rng.sample_without_replacement(eligible.size(), identities)) {
    const auto& lists = by_id[eligible[pick]];
    for (const auto& list : lists)
      for (std::size_t j : rng.sample_without_replacement(list.size(), half)) {
        batch.source_indices.push_back(list[j]);
        batch.images.push_back(train[list[j]]);
      }
  }
  return batch;
}

namespace {

void write_split(const std::vector<PersonImage>& images, const DatasetSpec& spec, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw ValidationError("cannot open " + file.string() + " for writing");
  out << spec.height << ' ' << spec.width << ' ' << spec.channels << ' ' << images.size() << '\n';
  for (const auto& im : images)
    out.write(reinterpret_cast<const char*>(im.pixels.data.data()),
              static_cast<std::streamsize>(im.pixels.data.size() * sizeof(double)));
  if (!out) throw ValidationError("failed writing " + file.string());
}

nlohmann::json split_labels(const std::vector<PersonImage>& images, const std::string& file) {
  nlohmann::json j;
  j["file"] = file;
  auto& ids = j["identities"] = nlohmann::json::array();
  auto& mods = j["modalities"] = nlohmann::json::array();
  auto& seeds = j["nuisance_seeds"] = nlohmann::json::array();
  for (const auto& im : images) {
    ids.push_back(im.identity);
    mods.push_back(std::string(to_string(im.modality)));
    seeds.push_back(im.nuisance_seed);
  }
  return j;
}

nlohmann::json transform_json(const ModalityTransform& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < t.channels; ++i)
    rows.push_back(std::vector<double>(t.matrix.begin() + static_cast<long>(i * t.channels),
                                       t.matrix.begin() + static_cast<long>((i + 1) * t.channels)));
  return {{"matrix", rows}, {"offset", t.offset}};
}

ModalityTransform transform_from_json(const nlohmann::json& j) {
  ModalityTransform t;
  const auto rows = j.at("matrix").get<std::vector<std::vector<double>>>();
  t.channels = rows.size();
  for (const auto& r : rows) {
    if (r.size() != t.channels) throw ShapeError("meta.json: modality matrix is not square");
    t.matrix.insert(t.matrix.end(), r.begin(), r.end());
  }
  t.offset = j.at("offset").get<std::vector<double>>();
  return t;
}

std::vector<PersonImage> read_split(const std::filesystem::path& file, const nlohmann::json& labels,
                                    const DatasetSpec& spec) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + file.string());
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  std::size_t h = 0, w = 0, c = 0, count = 0;
  if (!(hs >> h >> w >> c >> count)) throw ValidationError(file.string() + ": malformed header");
  if (h != spec.height || w != spec.width || c != spec.channels)
    throw ShapeError(file.string() + ": header dimensions disagree with meta.json");
  const auto ids = labels.at("identities").get<std::vector<int>>();
  const auto mods = labels.at("modalities").get<std::vector<std::string>>();
  const auto seeds = labels.at("nuisance_seeds").get<std::vector<std::uint64_t>>();
  if (ids.size() != count || mods.size() != count || seeds.size() != count)
    throw ShapeError(file.string() + ": label count disagrees with header");
  std::vector<PersonImage> images(count);
  for (std::size_t n = 0; n < count; ++n) {
    auto& im = images[n];
    im.pixels = Tensor({h, w, c});
    in.read(reinterpret_cast<char*>(im.pixels.data.data()),
            static_cast<std::streamsize>(im.pixels.data.size() * sizeof(double)));
    im.identity = ids[n];
    im.modality = modality_from_string(mods[n]);
    im.nuisance_seed = seeds[n];
  }
  if (!in) throw ValidationError(file.string() + ": truncated pixel data");
  return images;
}

}  // namespace

void save_dataset(const DatasetSplit& split, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["spec"] = split.spec;
  meta["seed"] = split.seed;
  meta["modality_transforms"] = {{"visible", transform_json(split.visible_transform)},
                                 {"infrared", transform_json(split.infrared_transform)}};
  meta["color_projection"] = split.color_projection;
  meta["train_ids"] = split.train_ids;
  meta["test_ids"] = split.test_ids;
  meta["splits"] = {{"train", split_labels(split.train, "train.bin")},
                    {"gallery", split_labels(split.gallery, "gallery.bin")},
                    {"query", split_labels(split.query, "query.bin")}};
  std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';
  write_split(split.train, split.spec, dir / "train.bin");
  write_split(split.gallery, split.spec, dir / "gallery.bin");
  write_split(split.query, split.spec, dir / "query.bin");
}

DatasetSplit load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw ValidationError("cannot open " + (dir / "meta.json").string());
  const auto meta = nlohmann::json::parse(in);
  DatasetSplit split;
  split.spec = dataset_spec_from_json(meta.at("spec"), "meta.spec");
  split.seed = meta.at("seed").get<std::uint64_t>();
  split.visible_transform = transform_from_json(meta.at("modality_transforms").at("visible"));
  split.infrared_transform = transform_from_json(meta.at("modality_transforms").at("infrared"));
  split.color_projection = meta.at("color_projection").get<std::vector<double>>();
  split.train_ids = meta.at("train_ids").get<std::vector<int>>();
  split.test_ids = meta.at("test_ids").get<std::vector<int>>();
  const auto& splits = meta.at("splits");
  split.train = read_split(dir / "train.bin", splits.at("train"), split.spec);
  split.gallery = read_split(dir / "gallery.bin", splits.at("gallery"), split.spec);
  split.query = read_split(dir / "query.bin", splits.at("query"), split.spec);
  // Profiles are not persisted; they are a pure function of (spec, seed).
  split.profiles = generate_profiles(split.spec, split.seed);
  return split;
}

}  // namespace partmix
