#pragma once

// Closed-loop benchmark workloads run on the simulator. Every client runs
// one transaction after another with no think time.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "htapsim/cluster_sim.hpp"
#include "htapsim/resource_group.hpp"

namespace htapsim {

enum class Workload : std::uint8_t { UpdateOnly, InsertOnly, TpcbLike, MixedHtap };

std::string_view to_string(Workload w) noexcept;
std::optional<Workload> parse_workload(std::string_view text);

/// Resource group layouts for the mixed workload on 32 cores: I shares all
/// cores by rate limit, II pins OLTP to 4 cores, III pins OLTP to 16.
enum class HtapLayout : std::uint8_t { SharedCores, SmallOltpCpuset, EvenCpusets };

std::string_view to_string(HtapLayout l) noexcept;
std::optional<HtapLayout> parse_htap_layout(std::string_view text);
std::vector<ResourceGroupConfig> htap_groups(HtapLayout layout);

struct BenchOptions {
  Workload workload = Workload::UpdateOnly;
  int clients = 8;
  Tick ticks = 10'000;
  std::uint64_t seed = 1;
  int segments = 3;
  bool legacy_locking = false;
  bool gdd_enabled = true;
  Tick gdd_period = 100;
  bool one_phase_commit = true;
  /// Rows preloaded into the updated tables.
  std::int64_t rows = 1000;
  HtapLayout htap_layout = HtapLayout::SharedCores;
  /// Mixed workload: OLAP clients (the `clients` are OLTP clients).
  int olap_clients = 4;
  /// Mixed workload: CPU work of one OLTP statement and of one OLAP process.
  std::uint64_t oltp_cpu = 10;
  std::uint64_t olap_cpu = 400;
  bool record_trace = false;

  void validate() const;
};

struct BenchResult {
  RunMetrics metrics;
  /// Mixed workload only: per-group metrics.
  std::optional<RunMetrics> oltp;
  std::optional<RunMetrics> olap;
  std::vector<TxnRecord> transactions;
  std::uint64_t trace_hash = 0;
};

BenchResult run_bench(const BenchOptions& options);

}  // namespace htapsim
