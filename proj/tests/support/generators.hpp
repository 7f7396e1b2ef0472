#pragma once

// Seeded random workloads for the property suites.

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "htapsim/cluster_sim.hpp"
#include "htapsim/scenario.hpp"

namespace htapsim::testing {

struct LockScenarioOptions {
  int max_txns = 6;
  /// Per transaction, including the final commit or abort.
  int max_statements = 8;
  bool gdd_enabled = false;
};

/// Scripted sessions on 3 segments, one transaction each, mixing row updates
/// and deletes on one or more segments, inserts, selects and explicit table
/// locks. Every transaction ends with commit or abort.
Scenario random_lock_scenario(std::uint64_t seed, const LockScenarioOptions& options = {});

/// A simulator loaded with the scenario's tables and sessions.
std::unique_ptr<ClusterSim> make_sim(const Scenario& scenario);

/// Concurrent free-running writers and readers of table "t", one transaction
/// per session, with message jitter and skewed links.
struct SiHistory {
  Scenario scenario;
  /// The statements of each session in order, without the final commit or
  /// abort.
  std::map<std::string, std::vector<Statement>> statements;
  std::map<std::string, bool> is_reader;
  /// Keys inserted by each writer.
  std::map<std::string, std::vector<std::int64_t>> inserted;
};

SiHistory random_si_history(std::uint64_t seed);

}  // namespace htapsim::testing
