#pragma once

// Flow-controlled motion channels and the redistribute-both-sides hash join
// dataflow. Slice 1 scans the outer table and slice 2 the inner table on every
// segment; both redistribute to the slice-3 join process on the destination
// segment. Every (sender, receiver) channel holds at most `capacity` unacked
// tuples; the receiver acknowledges a tuple when it consumes it.
//
// Without prefetch a join process reads one outer tuple, then the whole inner
// side, then the rest of the outer side. With prefetch it reads the whole
// inner side first.

#include <cstdint>
#include <string>
#include <vector>

namespace htapsim {

struct ProcessId {
  int segment = 0;
  int slice = 0;  // 1 outer producer, 2 inner producer, 3 join consumer

  auto operator<=>(const ProcessId&) const = default;
};

std::string to_string(const ProcessId& p);

struct RoutedTuple {
  int destination = 0;
  std::int64_t key = 0;
};

struct JoinInput {
  int segments = 0;
  /// Per source segment, in send order.
  std::vector<std::vector<RoutedTuple>> outer;
  std::vector<std::vector<RoutedTuple>> inner;
};

/// A skewed layout for `segments` >= 3 that deadlocks the join without
/// prefetch: the outer scan on segment 1 first floods segment 0 and the inner
/// scan on segment 2 first floods segment 1.
JoinInput adversarial_join_input(int segments, int capacity);

/// Routes every tuple by the hash of its key.
JoinInput hashed_join_input(int segments, const std::vector<std::vector<std::int64_t>>& outer_keys,
                            const std::vector<std::vector<std::int64_t>>& inner_keys);

/// Pairs with equal key that meet at the same destination.
std::uint64_t expected_join_pairs(const JoinInput& input);

struct JoinRun {
  bool completed = false;
  /// When stalled: a wait-for cycle of processes, first repeated last.
  std::vector<ProcessId> cycle;
  /// Every blocked process and what it waits for, when stalled.
  std::vector<std::pair<ProcessId, ProcessId>> waits;
  std::uint64_t joined_pairs = 0;
  std::uint64_t steps = 0;
};

JoinRun run_join(const JoinInput& input, int capacity, bool prefetch);
JoinRun run_join_scenario(int segments, int capacity, bool prefetch);

/// "p(seg0,slice3) -> p(seg2,slice2) -> ..." for a cycle.
std::string describe_cycle(const std::vector<ProcessId>& cycle);

}  // namespace htapsim
