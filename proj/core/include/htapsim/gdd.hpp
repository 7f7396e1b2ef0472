#pragma once

// Global deadlock detection over a set of per-segment wait-for graphs.
//
// Two greedy reduction rules are applied until neither removes anything:
//
//   R1  a vertex with global out-degree 0 will finish and release every lock
//       it holds, so every edge pointing at it is removed;
//   R2  within one segment, a vertex with local out-degree 0 will release its
//       tuple locks there without finishing, so dotted edges pointing at it on
//       that segment are removed.
//
// Anything left after the fixpoint is a deadlock candidate, which is only
// reported once it has been validated against the live cluster.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "htapsim/types.hpp"
#include "htapsim/wait_graph.hpp"

namespace htapsim {

enum class ReductionRule : std::uint8_t { ZeroGlobalOutDegree, ZeroLocalOutDegree };

struct RuleApplication {
  ReductionRule rule = ReductionRule::ZeroGlobalOutDegree;
  Dxid vertex{};
  SegmentId segment = kCoordinator;  // only meaningful for ZeroLocalOutDegree

  auto operator<=>(const RuleApplication&) const = default;
};

struct RemovalStep {
  RuleApplication application;
  std::vector<WaitEdge> removed;
};

/// Every rule instance that would remove at least one edge right now.
std::vector<RuleApplication> applicable_rules(const GlobalWaitForGraph& g);

/// Applies one rule instance; returns the removed edges (empty when the rule
/// does not currently hold for that vertex).
std::vector<WaitEdge> apply_rule(GlobalWaitForGraph& g, const RuleApplication& application);

/// Greedy fixpoint in the detector's fixed order: each round runs R1 over all
/// vertices in ascending dxid, then R2 over each local graph in segment order.
GlobalWaitForGraph reduce(GlobalWaitForGraph g, std::vector<RemovalStep>* trace = nullptr);

/// One trace line, e.g. "deg(G)(C)=0: remove vertex C and all edges to C".
std::string describe_step(const RemovalStep& step,
                          const std::function<std::string(Dxid)>& label = {});

/// Short form, "R1 C" or "R2 B@seg1".
std::string compact_step(const RemovalStep& step, const std::function<std::string(Dxid)>& label = {});

enum class DetectionOutcome : std::uint8_t { Clean, Deadlock, Stale };

std::string_view to_string(DetectionOutcome o) noexcept;

enum class VictimPolicy : std::uint8_t { YoungestDxid };

struct GddConfig {
  Tick period = 100;
  VictimPolicy victim_policy = VictimPolicy::YoungestDxid;
  /// Ticks between collecting consecutive segments' graphs.
  Tick collection_skew = 0;

  void validate() const;
};

struct DetectionVerdict {
  DetectionOutcome outcome = DetectionOutcome::Clean;
  std::vector<WaitEdge> residual_edges;
  /// One victim per weakly connected residual component.
  std::vector<Dxid> victims;
  /// A directed cycle through the residual graph, first vertex repeated last.
  std::vector<Dxid> cycle;
  std::vector<RemovalStep> trace;

  std::optional<Dxid> victim() const {
    if (victims.empty()) return std::nullopt;
    return victims.front();
  }
};

/// What the detector may ask of the cluster while it is frozen.
struct LiveView {
  std::function<bool(Dxid)> running;
  /// Optional: whether a residual edge still exists in the live lock tables.
  std::function<bool(const WaitEdge&)> edge_present;
};

DetectionVerdict detect(const GlobalWaitForGraph& g, const LiveView& live,
                        VictimPolicy policy = VictimPolicy::YoungestDxid);

/// Some directed cycle of the edge set (first vertex repeated at the end), or
/// empty if the edges are acyclic.
std::vector<Dxid> find_cycle(const std::vector<WaitEdge>& edges);

/// For each weakly connected component of `residual`, the youngest (largest
/// dxid) transaction that lies on a cycle.
std::vector<Dxid> select_victims(const std::vector<WaitEdge>& residual, VictimPolicy policy);

/// Cluster operations needed to break a deadlock.
class ClusterControl {
 public:
  virtual ~ClusterControl() = default;
  virtual bool is_running(Dxid txn) const = 0;
  virtual void abort_transaction(Dxid txn, std::string_view reason) = 0;
};

/// Aborts the verdict's victims that are still running and returns them. An
/// empty result means every victim had already finished and detection should
/// simply run again. Throws ProtocolError unless the verdict is Deadlock.
std::vector<Dxid> break_deadlock(const DetectionVerdict& verdict, ClusterControl& cluster);

}  // namespace htapsim
