#pragma once

// Scenario files: tables, resource groups, scripted sessions with global step
// numbers and optional expectations.
//
//   config:   {segments, seed, gdd: {enabled, period, skew}, legacy_locking,
//              one_phase_commit, message_delay, exec_cost, fsync_cost,
//              delay_jitter, links: [{from, to, delay}], failing_prepare,
//              cores, global_memory | global_memory_mb}
//   tables:   [{name, columns, distributed_by, rows}]
//   groups:   [{name, CONCURRENCY, MEMORY_LIMIT, MEMORY_SHARED_QUOTA,
//               CPU_RATE_LIMIT | CPUSET}]
//   sessions: [{id, group, steps: [{seq, sql, mem, cpu, processes, at}]}]
//   expect:   {verdict, victims, outcomes: {session: outcome}, gdd_trace}

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "htapsim/cluster_sim.hpp"

namespace htapsim {

class ScenarioError : public std::runtime_error {
 public:
  ScenarioError(int line, const std::string& message);
  /// 1-based; 0 when the error has no position.
  int line() const noexcept { return line_; }

 private:
  int line_;
};

struct TableSpec {
  TableDef def;
  std::vector<Row> rows;
};

struct ScenarioExpect {
  std::optional<DetectionOutcome> verdict;
  std::optional<std::vector<std::string>> victims;
  std::map<std::string, TxnOutcome> outcomes;
  /// Compact removal steps ("R1 C", "R2 B@seg1") of the first detector run
  /// that removed anything.
  std::optional<std::vector<std::string>> gdd_trace;

  bool empty() const { return !verdict && !victims && outcomes.empty() && !gdd_trace; }
};

struct Scenario {
  std::string name;
  SimConfig config;
  std::vector<TableSpec> tables;
  std::vector<SessionSpec> sessions;
  ScenarioExpect expect;
};

Scenario parse_scenario(std::string_view text);
/// Throws ScenarioError (line 0) when the file cannot be read.
Scenario load_scenario(const std::string& path);

struct ScenarioResult {
  std::vector<SessionReport> sessions;
  std::vector<GddRun> gdd_runs;
  /// Deadlock when some detector run found one; with the detector disabled,
  /// the verdict on the wait-for graph left at the end.
  DetectionOutcome verdict = DetectionOutcome::Clean;
  std::vector<std::string> victims;
  /// Compact steps of the first detector run that removed anything.
  std::vector<std::string> gdd_trace;
  CommitAccounting accounting;
  RunMetrics metrics;
  std::vector<TxnRecord> transactions;
  std::vector<std::string> trace;
  std::uint64_t trace_hash = 0;
  std::string final_state;
  /// Expectations that did not hold.
  std::vector<std::string> failures;

  bool ok() const noexcept { return failures.empty(); }
};

ScenarioResult run_scenario(const Scenario& scenario);

}  // namespace htapsim
