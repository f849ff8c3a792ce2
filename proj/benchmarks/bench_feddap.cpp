// Microbenchmarks for the numeric hot paths: feature extraction, the
// dual-alignment backward pass, prototype fusion, and one local epoch.
// Shapes follow the default benchmark config (16 -> 48 -> 24, 5 classes).

#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "feddap/config.hpp"
#include "feddap/federation.hpp"
#include "feddap/model.hpp"
#include "feddap/numerics.hpp"
#include "feddap/prototypes.hpp"
#include "feddap/rng.hpp"

using namespace feddap;

namespace {

Vec random_vec(Rng& rng, std::size_t n) {
  Vec v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

struct Fixture {
  ModelParams params;
  std::vector<Sample> batch;
  BatchView view;
  PrototypeTable table;
  LossOptions opt;

  Fixture() {
    params = init_params({16, 48, 24}, 5, 1);
    Rng rng(2, StreamPurpose::kDataGen, 0, 0);
    batch.resize(32);
    for (auto& s : batch) {
      s.x = random_vec(rng, 16);
      s.y = static_cast<int>(rng.uniform_int(5));
      s.d = 0;
    }
    for (const auto& s : batch) view.push_back(&s);
    table = PrototypeTable(4, 5, 24);
    for (int d = 0; d < 4; ++d)
      for (int c = 0; c < 5; ++c) table.set(c, d, random_vec(rng, 24));
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

void BM_Cosine(benchmark::State& state) {
  Rng rng(3, StreamPurpose::kDataGen, 1, 0);
  Vec a = random_vec(rng, 24), b = random_vec(rng, 24);
  for (auto _ : state) benchmark::DoNotOptimize(cosine(a, b));
}
BENCHMARK(BM_Cosine);

void BM_ForwardFeatures(benchmark::State& state) {
  Fixture& f = fixture();
  for (auto _ : state)
    benchmark::DoNotOptimize(forward_features(f.params, f.batch[0].x));
}
BENCHMARK(BM_ForwardFeatures);

void BM_AttentionWeights(benchmark::State& state) {
  Rng rng(4, StreamPurpose::kDataGen, 2, 0);
  std::vector<Vec> members;
  for (int i = 0; i < 8; ++i) members.push_back(random_vec(rng, 24));
  for (auto _ : state)
    benchmark::DoNotOptimize(attention_weights(members, 0.001));
}
BENCHMARK(BM_AttentionWeights);

void BM_LossTotal(benchmark::State& state) {
  Fixture& f = fixture();
  for (auto _ : state)
    benchmark::DoNotOptimize(loss_total(f.params, f.view, f.table, 0, f.opt));
}
BENCHMARK(BM_LossTotal);

void BM_Backward(benchmark::State& state) {
  Fixture& f = fixture();
  for (auto _ : state)
    benchmark::DoNotOptimize(backward(f.params, f.view, f.table, 0, f.opt));
}
BENCHMARK(BM_Backward);

void BM_AggregateDomainSpecific(benchmark::State& state) {
  Rng rng(5, StreamPurpose::kDataGen, 3, 0);
  std::vector<LocalPrototypeSet> sets(8);
  for (int i = 0; i < 8; ++i) {
    sets[i].client_id = i;
    sets[i].domain_id = i / 2;
    for (int c = 0; c < 5; ++c)
      sets[i].entries[c] = {random_vec(rng, 24), 160};
  }
  for (auto _ : state)
    benchmark::DoNotOptimize(aggregate_domain_specific(sets, 4, 5, 0.001));
}
BENCHMARK(BM_AggregateDomainSpecific);

void BM_LocalEpoch(benchmark::State& state) {
  // One client's epoch on a small shard (~40 samples, batch 32).
  ExperimentConfig cfg;
  cfg.local_epochs = 1;
  cfg.data.samples_per_class_per_domain = 20;
  cfg.data.domains = 2;
  validate(cfg);
  FederationData fed = build_federation(cfg);
  ModelParams global = init_params({16, 48, 24}, 5, 1);
  Fixture& f = fixture();
  PrototypeTable table(2, 5, 24);
  Rng rng(6, StreamPurpose::kDataGen, 4, 0);
  for (int d = 0; d < 2; ++d)
    for (int c = 0; c < 5; ++c) table.set(c, d, random_vec(rng, 24));
  (void)f;

  std::uint64_t round = 1;
  for (auto _ : state)
    benchmark::DoNotOptimize(
        local_update(fed.clients[0], global, table, cfg, round++));
}
BENCHMARK(BM_LocalEpoch)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
