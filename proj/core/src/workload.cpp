#include "htapsim/workload.hpp"

#include <memory>
#include <stdexcept>

#include <fmt/format.h>

namespace htapsim {

std::string_view to_string(Workload w) noexcept {
  switch (w) {
    case Workload::UpdateOnly: return "update-only";
    case Workload::InsertOnly: return "insert-only";
    case Workload::TpcbLike: return "tpcb-like";
    case Workload::MixedHtap: return "mixed-htap";
  }
  return "?";
}

std::optional<Workload> parse_workload(std::string_view text) {
  for (Workload w : {Workload::UpdateOnly, Workload::InsertOnly, Workload::TpcbLike, Workload::MixedHtap}) {
    if (text == to_string(w)) return w;
  }
  return std::nullopt;
}

std::string_view to_string(HtapLayout l) noexcept {
  switch (l) {
    case HtapLayout::SharedCores: return "I";
    case HtapLayout::SmallOltpCpuset: return "II";
    case HtapLayout::EvenCpusets: return "III";
  }
  return "?";
}

std::optional<HtapLayout> parse_htap_layout(std::string_view text) {
  for (HtapLayout l : {HtapLayout::SharedCores, HtapLayout::SmallOltpCpuset, HtapLayout::EvenCpusets}) {
    if (text == to_string(l)) return l;
  }
  return std::nullopt;
}

std::vector<ResourceGroupConfig> htap_groups(HtapLayout layout) {
  ResourceGroupConfig olap{"olap", 10, 15, 20, std::nullopt, std::nullopt};
  ResourceGroupConfig oltp{"oltp", 50, 15, 20, std::nullopt, std::nullopt};
  switch (layout) {
    case HtapLayout::SharedCores:
      olap.cpu_rate_limit = 20;
      oltp.cpu_rate_limit = 20;
      break;
    case HtapLayout::SmallOltpCpuset:
      olap.cpuset = parse_cpuset("4-31");
      oltp.cpuset = parse_cpuset("0-3");
      break;
    case HtapLayout::EvenCpusets:
      olap.cpuset = parse_cpuset("16-31");
      oltp.cpuset = parse_cpuset("0-15");
      break;
  }
  return {olap, oltp};
}

void BenchOptions::validate() const {
  if (clients < 1) throw std::invalid_argument("clients must be at least 1");
  if (ticks < 1) throw std::invalid_argument("ticks must be at least 1");
  if (segments < 1) throw std::invalid_argument("segments must be at least 1");
  if (rows < 1) throw std::invalid_argument("rows must be at least 1");
  if (workload == Workload::UpdateOnly && rows < clients) {
    throw std::invalid_argument("update-only needs at least one row per client");
  }
  if (workload == Workload::MixedHtap && olap_clients < 0) throw std::invalid_argument("olap clients must not be negative");
}

namespace {

constexpr int kHtapCores = 32;
constexpr std::uint64_t kHtapMemory = 1ULL << 30U;

SessionStep step(const std::string& sql, std::uint64_t cpu = 0, unsigned processes = 1) {
  SessionStep s;
  s.statement = parse_statement(sql);
  s.cpu = cpu;
  s.cpu_processes = processes;
  return s;
}

std::vector<Row> numbered_rows(std::int64_t n) {
  std::vector<Row> rows;
  rows.reserve(static_cast<std::size_t>(n));
  for (std::int64_t k = 1; k <= n; ++k) rows.push_back(Row{k, 0});
  return rows;
}

using Generator = std::function<std::optional<std::vector<SessionStep>>()>;

// Each client updates keys of its own residue class, so concurrent clients
// never touch the same row.
Generator update_only(std::shared_ptr<Rng> rng, int client, const BenchOptions& o) {
  const std::int64_t stride = o.clients;
  const std::int64_t count = (o.rows - client - 1) / stride + 1;
  return [rng, client, stride, count]() -> std::optional<std::vector<SessionStep>> {
    const std::int64_t key = client + 1 + stride * rng->between(0, count - 1);
    return std::vector<SessionStep>{step(fmt::format("update t set c2 = c2 + 1 where c1 = {}", key)),
                                    step("commit")};
  };
}

Generator insert_only(std::shared_ptr<Rng> rng, int client, const BenchOptions& o) {
  auto next = std::make_shared<std::int64_t>(0);
  const std::int64_t clients = o.clients;
  return [rng, client, clients, next]() -> std::optional<std::vector<SessionStep>> {
    const std::int64_t key = (*next)++ * clients + client + 1;
    return std::vector<SessionStep>{
        step(fmt::format("insert into t values ({}, {})", key, rng->between(0, 1000))), step("commit")};
  };
}

struct TpcbScale {
  std::int64_t branches;
  std::int64_t tellers;
  std::int64_t accounts;
};

Generator tpcb(std::shared_ptr<Rng> rng, TpcbScale scale) {
  return [rng, scale]() -> std::optional<std::vector<SessionStep>> {
    const std::int64_t aid = rng->between(1, scale.accounts);
    const std::int64_t tid = rng->between(1, scale.tellers);
    const std::int64_t bid = rng->between(1, scale.branches);
    const std::int64_t delta = rng->between(-5000, 5000);
    return std::vector<SessionStep>{
        step(fmt::format("update accounts set c2 = c2 + {} where c1 = {}", delta, aid)),
        step(fmt::format("select * from accounts where c1 = {}", aid)),
        step(fmt::format("update tellers set c2 = c2 + {} where c1 = {}", delta, tid)),
        step(fmt::format("update branches set c2 = c2 + {} where c1 = {}", delta, bid)),
        step(fmt::format("insert into history values ({}, {})", aid, delta)),
        step("commit"),
    };
  };
}

Generator oltp(std::shared_ptr<Rng> rng, const BenchOptions& o) {
  const std::int64_t rows = o.rows;
  const std::uint64_t cpu = o.oltp_cpu;
  return [rng, rows, cpu]() -> std::optional<std::vector<SessionStep>> {
    const std::int64_t key = rng->between(1, rows);
    return std::vector<SessionStep>{step(fmt::format("update orders set c2 = c2 + 1 where c1 = {}", key), cpu),
                                    step("commit")};
  };
}

Generator olap(const BenchOptions& o) {
  const std::uint64_t cpu = o.olap_cpu;
  return [cpu]() -> std::optional<std::vector<SessionStep>> {
    return std::vector<SessionStep>{step("select * from lineitem where c2 = 1", cpu, kHtapCores), step("commit")};
  };
}

}  // namespace

BenchResult run_bench(const BenchOptions& o) {
  o.validate();
  SimConfig config;
  config.segments = o.segments;
  config.seed = o.seed;
  config.legacy_locking = o.legacy_locking;
  config.gdd_enabled = o.gdd_enabled;
  config.gdd.period = o.gdd_period;
  config.one_phase_commit = o.one_phase_commit;
  config.record_trace = o.record_trace;
  if (o.workload == Workload::MixedHtap) {
    config.cores = kHtapCores;
    config.global_memory = kHtapMemory;
    config.groups = htap_groups(o.htap_layout);
  }

  ClusterSim sim(config);
  auto rng = std::make_shared<Rng>(o.seed);
  switch (o.workload) {
    case Workload::UpdateOnly:
      sim.create_table(TableDef{"t"}, numbered_rows(o.rows));
      for (int c = 0; c < o.clients; ++c) {
        sim.add_session(SessionSpec{fmt::format("c{}", c), "", {}, update_only(rng, c, o)});
      }
      break;
    case Workload::InsertOnly:
      sim.create_table(TableDef{"t"});
      for (int c = 0; c < o.clients; ++c) {
        sim.add_session(SessionSpec{fmt::format("c{}", c), "", {}, insert_only(rng, c, o)});
      }
      break;
    case Workload::TpcbLike: {
      const std::int64_t branches = o.clients;
      const TpcbScale scale{branches, branches * 10, std::max<std::int64_t>(o.rows, branches * 100)};
      sim.create_table(TableDef{"branches"}, numbered_rows(scale.branches));
      sim.create_table(TableDef{"tellers"}, numbered_rows(scale.tellers));
      sim.create_table(TableDef{"accounts"}, numbered_rows(scale.accounts));
      sim.create_table(TableDef{"history"});
      for (int c = 0; c < o.clients; ++c) sim.add_session(SessionSpec{fmt::format("c{}", c), "", {}, tpcb(rng, scale)});
      break;
    }
    case Workload::MixedHtap: {
      sim.create_table(TableDef{"orders"}, numbered_rows(o.rows));
      std::vector<Row> facts;
      for (std::int64_t k = 1; k <= 64; ++k) facts.push_back(Row{k, k % 4});
      sim.create_table(TableDef{"lineitem"}, facts);
      for (int c = 0; c < o.olap_clients; ++c) sim.add_session(SessionSpec{fmt::format("olap{}", c), "olap", {}, olap(o)});
      for (int c = 0; c < o.clients; ++c) {
        sim.add_session(SessionSpec{fmt::format("oltp{}", c), "oltp", {}, oltp(rng, o)});
      }
      break;
    }
  }
  sim.run(o.ticks);

  BenchResult r;
  r.metrics = compute_metrics(sim, o.ticks);
  if (o.workload == Workload::MixedHtap) {
    r.oltp = compute_metrics(sim, o.ticks, "oltp");
    r.olap = compute_metrics(sim, o.ticks, "olap");
  }
  r.transactions = sim.transactions();
  r.trace_hash = sim.trace_hash();
  return r;
}

}  // namespace htapsim
