#include <benchmark/benchmark.h>

#include "htapsim/gdd.hpp"
#include "htapsim/lock_manager.hpp"
#include "htapsim/rng.hpp"
#include "htapsim/workload.hpp"

namespace htapsim {
namespace {

GlobalWaitForGraph random_graph(std::uint64_t seed, int vertices, int edges) {
  Rng rng(seed);
  GlobalWaitForGraph g;
  for (int i = 0; i < edges; ++i) {
    const Dxid w{1 + rng.below(static_cast<std::uint64_t>(vertices))};
    const Dxid h{1 + rng.below(static_cast<std::uint64_t>(vertices))};
    if (w == h) continue;
    const SegmentId s = segment_id(static_cast<int>(rng.between(-1, 2)));
    g.add_edge(WaitEdge{s, w, h, rng.chance(1, 2) ? EdgeKind::Dotted : EdgeKind::Solid});
  }
  return g;
}

void BM_Reduce(benchmark::State& state) {
  const auto n = static_cast<int>(state.range(0));
  const GlobalWaitForGraph g = random_graph(1, n, 2 * n);
  for (auto _ : state) benchmark::DoNotOptimize(reduce(g));
  state.SetComplexityN(n);
}
BENCHMARK(BM_Reduce)->RangeMultiplier(4)->Range(8, 512)->Complexity();

void BM_Detect(benchmark::State& state) {
  const auto n = static_cast<int>(state.range(0));
  const GlobalWaitForGraph g = random_graph(2, n, 2 * n);
  for (auto _ : state) benchmark::DoNotOptimize(detect(g, LiveView{}));
}
BENCHMARK(BM_Detect)->RangeMultiplier(4)->Range(8, 512);

void BM_LockAcquireRelease(benchmark::State& state) {
  const auto txns = static_cast<std::uint64_t>(state.range(0));
  for (auto _ : state) {
    LockTable table(segment_id(0));
    for (std::uint64_t t = 1; t <= txns; ++t) {
      table.register_txn(Dxid{t}, LocalXid{t});
      table.acquire(Dxid{t}, LockTag::relation_lock(segment_id(0), "t"), LockMode::RowExclusive, 0);
    }
    for (std::uint64_t t = 1; t <= txns; ++t) table.release_all(Dxid{t});
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(txns));
}
BENCHMARK(BM_LockAcquireRelease)->Arg(8)->Arg(64)->Arg(512);

void BM_UpdateOnlyBench(benchmark::State& state) {
  BenchOptions o;
  o.ticks = 2000;
  o.legacy_locking = state.range(0) == 1;
  for (auto _ : state) benchmark::DoNotOptimize(run_bench(o));
}
BENCHMARK(BM_UpdateOnlyBench)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace htapsim

BENCHMARK_MAIN();
