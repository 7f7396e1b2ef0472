#pragma once

#include <compare>
#include <cstddef>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "htapsim/lock_manager.hpp"
#include "htapsim/types.hpp"

namespace htapsim {

/// Solid: released only when the holder ends. Dotted: the holder may release
/// it mid-transaction (tuple locks).
enum class EdgeKind : std::uint8_t { Solid, Dotted };

std::string_view to_string(EdgeKind k) noexcept;

struct WaitEdge {
  SegmentId segment{};
  Dxid waiter{};
  Dxid holder{};
  EdgeKind kind = EdgeKind::Solid;

  auto operator<=>(const WaitEdge&) const = default;
};

EdgeKind edge_kind_for(LockTagKind blocked_on) noexcept;

struct LocalWaitGraph {
  SegmentId segment{};
  std::vector<WaitEdge> edges;  // sorted, unique, all on `segment`
  Tick collected_at = 0;

  std::size_t out_degree(Dxid v) const;
};

/// Derives the wait-for edges of one lock table: one edge per (waiter,
/// blocker) pair, where blockers are conflicting holders plus conflicting
/// waiters queued ahead.
LocalWaitGraph snapshot_local(const LockTable& table, Tick now);

/// A set of per-segment local graphs, coordinator included.
class GlobalWaitForGraph {
 public:
  GlobalWaitForGraph() = default;
  explicit GlobalWaitForGraph(std::vector<LocalWaitGraph> locals);

  /// Replaces any graph already present for the same segment.
  void add_local(LocalWaitGraph local);
  /// Adds one edge to the graph of its segment, creating it when needed.
  void add_edge(const WaitEdge& edge);

  const std::vector<LocalWaitGraph>& locals() const noexcept { return locals_; }
  std::vector<LocalWaitGraph>& locals() noexcept { return locals_; }

  std::set<Dxid> vertices() const;
  std::vector<WaitEdge> edges() const;
  std::size_t edge_count() const;
  bool empty() const { return edge_count() == 0; }

  /// Sum over segments of the out-edges of `v`.
  std::size_t global_out_degree(Dxid v) const;
  std::size_t local_out_degree(SegmentId segment, Dxid v) const;

  bool operator==(const GlobalWaitForGraph& other) const { return edges() == other.edges(); }

 private:
  std::vector<LocalWaitGraph> locals_;
};

class GraphFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// {"vertices":[..], "edges":[{"segment":..,"from":..,"to":..,"kind":"solid"|"dotted"}]}
std::string to_graph_document(const GlobalWaitForGraph& g);
GlobalWaitForGraph parse_graph_document(std::string_view text);

}  // namespace htapsim
