#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "partmix/dataset.hpp"
#include "partmix/errors.hpp"

using namespace partmix;

namespace {

DatasetSpec small_spec() {
  DatasetSpec s;
  s.num_train_ids = 6;
  s.num_test_ids = 4;
  s.images_per_id_per_modality = 3;
  return s;
}

}  // namespace

TEST_CASE("same spec and seed give bit-identical splits") {
  const auto a = generate_dataset(small_spec(), 17);
  const auto b = generate_dataset(small_spec(), 17);
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].pixels.data == b.train[i].pixels.data);
  for (std::size_t i = 0; i < a.gallery.size(); ++i) CHECK(a.gallery[i].pixels.data == b.gallery[i].pixels.data);
  const auto c = generate_dataset(small_spec(), 18);
  CHECK(a.train[0].pixels.data != c.train[0].pixels.data);
}

TEST_CASE("default split has disjoint identities and the expected sizes") {
  const auto s = generate_dataset(DatasetSpec{}, 0);
  std::set<int> train(s.train_ids.begin(), s.train_ids.end()), test(s.test_ids.begin(), s.test_ids.end());
  CHECK(train.size() == 64);
  CHECK(test.size() == 32);
  std::vector<int> both;
  std::set_intersection(train.begin(), train.end(), test.begin(), test.end(), std::back_inserter(both));
  CHECK(both.empty());
  CHECK(s.train.size() == 64 * 2 * 10);
  CHECK(s.query.size() == 320);
  CHECK(s.gallery.size() == 320);
  for (const auto& im : s.query) CHECK(im.modality == Modality::visible);
  for (const auto& im : s.gallery) CHECK(im.modality == Modality::infrared);
}

TEST_CASE("profiles do not depend on modality") {
  const auto s = generate_dataset(small_spec(), 3);
  const PersonImage* vis = nullptr;
  const PersonImage* ir = nullptr;
  for (const auto& im : s.train) {
    if (im.identity != 2) continue;
    (im.modality == Modality::visible ? vis : ir) = &im;
  }
  REQUIRE(vis);
  REQUIRE(ir);
  // Rendering is a pure function of the shared profile, the modality transform and the nuisance seed.
  const auto& prof = s.profiles[2];
  CHECK(render_person(s.spec, prof, s.color_projection, s.visible_transform, vis->nuisance_seed).data == vis->pixels.data);
  CHECK(render_person(s.spec, prof, s.color_projection, s.infrared_transform, ir->nuisance_seed).data == ir->pixels.data);
}

TEST_CASE("pixels stay in the unit interval") {
  const auto s = generate_dataset(small_spec(), 5);
  for (const auto& im : s.train) {
    CHECK(im.height() == 24);
    CHECK(im.width() == 8);
    CHECK(im.channels() == 3);
    for (double v : im.pixels.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("minibatch shapes and balance") {
  const auto s = generate_dataset(DatasetSpec{}, 1);
  const auto b = sample_minibatch(s.train, 16, 8, 9);
  CHECK(b.images.size() == 128);
  for (std::size_t g = 0; g < 16; ++g) {
    std::set<int> ids;
    int vis = 0;
    for (std::size_t j = 0; j < 8; ++j) {
      const auto& im = b.images[g * 8 + j];
      ids.insert(im.identity);
      vis += im.modality == Modality::visible;
      if (j < 4) CHECK(im.modality == Modality::visible);
    }
    CHECK(ids.size() == 1);
    CHECK(vis == 4);
  }
  std::set<std::size_t> unique(b.source_indices.begin(), b.source_indices.end());
  CHECK(unique.size() == 128);

  const auto tiny = sample_minibatch(s.train, 2, 2, 4);
  REQUIRE(tiny.images.size() == 4);
  CHECK(tiny.images[0].modality == Modality::visible);
  CHECK(tiny.images[1].modality == Modality::infrared);
  CHECK(tiny.images[0].identity == tiny.images[1].identity);
  CHECK(tiny.images[0].identity != tiny.images[2].identity);

  CHECK(sample_minibatch(s.train, 16, 8, 9).source_indices == b.source_indices);
}

TEST_CASE("minibatch rejects invalid shapes") {
  const auto s = generate_dataset(small_spec(), 1);
  CHECK_THROWS_AS(sample_minibatch(s.train, 0, 2, 0), ValidationError);
  CHECK_THROWS_AS(sample_minibatch(s.train, 2, 3, 0), ValidationError);
  CHECK_THROWS_AS(sample_minibatch(s.train, 7, 2, 0), SamplingError);
  CHECK_THROWS_AS(sample_minibatch(s.train, 2, 8, 0), SamplingError);
}

TEST_CASE("save and load round-trip") {
  const auto s = generate_dataset(small_spec(), 8);
  const auto dir = std::filesystem::temp_directory_path() / "partmix_dataset_roundtrip";
  std::filesystem::remove_all(dir);
  save_dataset(s, dir);
  const auto r = load_dataset(dir);
  CHECK(r.spec == s.spec);
  CHECK(r.seed == s.seed);
  REQUIRE(r.train.size() == s.train.size());
  for (std::size_t i = 0; i < s.train.size(); ++i) {
    CHECK(r.train[i].pixels.data == s.train[i].pixels.data);
    CHECK(r.train[i].identity == s.train[i].identity);
    CHECK(r.train[i].modality == s.train[i].modality);
  }
  CHECK(r.query.size() == s.query.size());
  CHECK(r.gallery.size() == s.gallery.size());
  std::filesystem::remove_all(dir);
}

TEST_CASE("spec validation") {
  DatasetSpec s;
  s.num_train_ids = 0;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = DatasetSpec{};
  s.height = 3;
  CHECK_THROWS_AS(s.validate(), ValidationError);
}
