#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "partmix/numerics.hpp"

namespace partmix {

enum class Modality : std::uint8_t { visible = 0, infrared = 1 };

std::string_view to_string(Modality m);
Modality modality_from_string(std::string_view s);
inline Modality other(Modality m) {
  return m == Modality::visible ? Modality::infrared : Modality::visible;
}

struct PersonImage {
  Tensor pixels;  // height x width x channels, intensities in [0, 1]
  int identity = 0;
  Modality modality = Modality::visible;
  std::uint64_t nuisance_seed = 0;

  std::size_t height() const { return pixels.shape.at(0); }
  std::size_t width() const { return pixels.shape.at(1); }
  std::size_t channels() const { return pixels.shape.at(2); }
};

/// Latent per-part appearance of one identity. Never depends on modality.
struct PartAttributeProfile {
  int identity = 0;
  std::vector<std::vector<double>> attributes;  // parts_gt x attribute_dim
};

struct DatasetSpec {
  std::size_t num_train_ids = 64;
  std::size_t num_test_ids = 32;
  std::size_t images_per_id_per_modality = 10;
  std::size_t parts_gt = 6;
  std::size_t attribute_dim = 8;
  std::size_t height = 24;
  std::size_t width = 8;
  std::size_t channels = 3;
  // Appearance and nuisance levels. Colors are offsets from mid-gray; the
  // luminance axis is preserved by both modality transforms, the chroma
  // plane is rotated differently per modality.
  double luminance_scale = 0.12;
  double chroma_scale = 0.20;
  double illumination_std = 0.15;
  double modality_offset_std = 0.05;
  double noise_std = 0.03;
  double intensity_jitter = 0.15;
  int boundary_jitter = 1;
  double occlusion_prob = 0.1;

  void validate() const;
  bool operator==(const DatasetSpec&) const = default;
};

void to_json(nlohmann::json& j, const DatasetSpec& s);
/// Strict: unknown keys raise ConfigError with the offending path.
void from_json(const nlohmann::json& j, DatasetSpec& s);
DatasetSpec dataset_spec_from_json(const nlohmann::json& j, const std::string& path);

/// Per-modality affine channel transform applied to color offsets around mid-gray.
struct ModalityTransform {
  std::size_t channels = 0;
  std::vector<double> matrix;  // channels x channels, row-major
  std::vector<double> offset;  // channels

  double condition_number() const;
  bool operator==(const ModalityTransform&) const = default;
};

struct DatasetSplit {
  DatasetSpec spec;
  std::uint64_t seed = 0;
  std::vector<PersonImage> train;
  std::vector<PersonImage> gallery;  // test identities, infrared
  std::vector<PersonImage> query;    // test identities, visible
  std::vector<int> train_ids;
  std::vector<int> test_ids;
  std::vector<PartAttributeProfile> profiles;  // indexed by identity
  ModalityTransform visible_transform;
  ModalityTransform infrared_transform;
  std::vector<double> color_projection;  // channels x attribute_dim

  const ModalityTransform& transform(Modality m) const {
    return m == Modality::visible ? visible_transform : infrared_transform;
  }
  /// All test images (query then gallery).
  std::vector<const PersonImage*> test_images() const;
};

/// Deterministic for fixed (spec, seed). Train and test identities are disjoint.
DatasetSplit generate_dataset(const DatasetSpec& spec, std::uint64_t seed);

/// Pure function of (profile, modality, nuisance_seed) given the dataset-level
/// projection and transforms.
Tensor render_person(const DatasetSpec& spec, const PartAttributeProfile& profile,
                     std::span<const double> color_projection, const ModalityTransform& transform,
                     std::uint64_t nuisance_seed);

struct MiniBatch {
  std::vector<PersonImage> images;
  std::vector<std::size_t> source_indices;  // positions in the train list
  std::size_t identities_per_batch = 0;     // P
  std::size_t images_per_identity = 0;      // K, half per modality
};

/// P identities without replacement, then K/2 visible and K/2 infrared images
/// per identity without replacement. Images are grouped by identity, visible first.
MiniBatch sample_minibatch(const std::vector<PersonImage>& train, std::size_t identities,
                           std::size_t images_per_identity, std::uint64_t seed);

/// Directory layout: meta.json plus <split>.bin per split. Each .bin holds a
/// text header line "H W C count\n" followed by little-endian float64 pixels.
void save_dataset(const DatasetSplit& split, const std::filesystem::path& dir);
DatasetSplit load_dataset(const std::filesystem::path& dir);

}  // namespace partmix
