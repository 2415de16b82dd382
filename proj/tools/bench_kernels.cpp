// Serial reference vs OpenMP kernels on default-sized batches.

#include <benchmark/benchmark.h>

#include <vector>

#include "partmix/config.hpp"
#include "partmix/eval.hpp"
#include "partmix/objective.hpp"
#include "partmix/trainer.hpp"

using namespace partmix;

namespace {

struct Fixture {
  ExperimentConfig cfg;
  DatasetSplit split;
  Model model;
  MiniBatch batch;
  std::vector<const Tensor*> pixels;
  std::vector<Encoding> encodings;
  std::vector<double> d_desc;
  std::vector<std::vector<double>> query, gallery;

  Fixture() : split(make_split(cfg)), model(initial_model(cfg)), batch(sample_minibatch(split.train, 16, 8, 1)) {
    for (const auto& im : batch.images) pixels.push_back(&im.pixels);
    encodings = encode_batch_serial(model, pixels);
    const std::size_t dd = model.dims().descriptor_dim();
    d_desc.resize(pixels.size() * dd);
    Rng rng(2);
    for (auto& v : d_desc) v = rng.normal();
    for (auto& d : describe(model, split.query)) query.push_back(std::move(d.concatenated));
    for (auto& d : describe(model, split.gallery)) gallery.push_back(std::move(d.concatenated));
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

void BM_EncodeBatch(benchmark::State& state) {
  auto& f = fixture();
  for (auto _ : state) {
    auto e = state.range(0) ? encode_batch(f.model, f.pixels) : encode_batch_serial(f.model, f.pixels);
    benchmark::DoNotOptimize(e.data());
  }
}

void BM_EncoderBackward(benchmark::State& state) {
  auto& f = fixture();
  const std::size_t dd = f.model.dims().descriptor_dim();
  const auto rows = dense_rows(std::span<const double>(f.d_desc), f.pixels.size(), dd);
  std::vector<double> grad(f.model.params().size());
  for (auto _ : state) {
    if (state.range(0))
      encoder_backward_batch(f.model, f.pixels, f.encodings, rows, {}, grad);
    else
      encoder_backward_batch_serial(f.model, f.pixels, f.encodings, rows, {}, grad);
    benchmark::DoNotOptimize(grad.data());
  }
}

void BM_RankAll(benchmark::State& state) {
  auto& f = fixture();
  for (auto _ : state) {
    auto r = state.range(0) ? rank_all(f.query, f.gallery) : rank_all_serial(f.query, f.gallery);
    benchmark::DoNotOptimize(r.data());
  }
}

void BM_PlanBatch(benchmark::State& state) {
  auto& f = fixture();
  for (auto _ : state) {
    auto p = state.range(0) ? plan_batch(f.model, f.batch.images, f.cfg.objective, Rng(3))
                            : plan_batch_serial(f.model, f.batch.images, f.cfg.objective, Rng(3));
    benchmark::DoNotOptimize(p.anchors.data());
  }
}

}  // namespace

// Argument 0 is the serial reference, 1 the OpenMP kernel.
BENCHMARK(BM_EncodeBatch)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EncoderBackward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_RankAll)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PlanBatch)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
