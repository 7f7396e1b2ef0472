#include <gtest/gtest.h>

#include <set>

#include "htapsim/interconnect.hpp"
#include "htapsim/rng.hpp"

namespace htapsim {
namespace {

using Wait = std::pair<ProcessId, ProcessId>;

std::set<Wait> cycle_edges(const std::vector<ProcessId>& cycle) {
  std::set<Wait> out;
  for (std::size_t i = 0; i + 1 < cycle.size(); ++i) out.emplace(cycle[i], cycle[i + 1]);
  return out;
}

TEST(JoinScenario, StallsWithFourProcessCycleWithoutPrefetch) {
  const JoinRun r = run_join_scenario(3, 2, false);
  ASSERT_FALSE(r.completed);
  ASSERT_EQ(r.cycle.size(), 5U);
  EXPECT_EQ(r.cycle.front(), r.cycle.back());
  const std::set<Wait> want{
      {ProcessId{0, 3}, ProcessId{2, 2}},
      {ProcessId{1, 3}, ProcessId{1, 1}},
      {ProcessId{1, 1}, ProcessId{0, 3}},
      {ProcessId{2, 2}, ProcessId{1, 3}},
  };
  EXPECT_EQ(cycle_edges(r.cycle), want);
}

TEST(JoinScenario, PrefetchCompletes) {
  const JoinRun r = run_join_scenario(3, 2, true);
  EXPECT_TRUE(r.completed);
  EXPECT_EQ(r.joined_pairs, expected_join_pairs(adversarial_join_input(3, 2)));
}

TEST(JoinScenario, LargeBufferCompletesWithoutPrefetch) {
  const JoinInput input = adversarial_join_input(3, 2);
  std::size_t inner = 0;
  for (const auto& s : input.inner) inner += s.size();
  std::size_t outer = 0;
  for (const auto& s : input.outer) outer += s.size();
  const JoinRun r = run_join(input, static_cast<int>(inner + outer), false);
  EXPECT_TRUE(r.completed);
  EXPECT_EQ(r.joined_pairs, expected_join_pairs(input));
}

TEST(JoinScenario, RejectsBadArguments) {
  EXPECT_THROW(run_join_scenario(3, 0, false), std::invalid_argument);
  EXPECT_THROW(run_join_scenario(2, 2, false), std::invalid_argument);
}

TEST(JoinScenario, DescribeCycle) {
  EXPECT_EQ(describe_cycle({ProcessId{0, 3}, ProcessId{2, 2}, ProcessId{0, 3}}),
            "p(seg0,slice3) -> p(seg2,slice2) -> p(seg0,slice3)");
}

TEST(JoinProperty, PrefetchAlwaysCompletes) {
  Rng rng(5);
  int stalls_without_prefetch = 0;
  for (int i = 0; i < 300; ++i) {
    const int segments = static_cast<int>(rng.between(1, 5));
    const int capacity = static_cast<int>(rng.between(1, 4));
    std::vector<std::vector<std::int64_t>> outer(static_cast<std::size_t>(segments));
    std::vector<std::vector<std::int64_t>> inner(static_cast<std::size_t>(segments));
    for (auto* side : {&outer, &inner}) {
      for (auto& keys : *side) {
        const auto n = rng.between(0, 12);
        for (std::int64_t k = 0; k < n; ++k) keys.push_back(rng.between(1, 10));
      }
    }
    const JoinInput input = hashed_join_input(segments, outer, inner);
    const JoinRun with = run_join(input, capacity, true);
    ASSERT_TRUE(with.completed) << "segments=" << segments << " capacity=" << capacity;
    EXPECT_EQ(with.joined_pairs, expected_join_pairs(input));
    const JoinRun without = run_join(input, capacity, false);
    if (!without.completed) {
      ++stalls_without_prefetch;
      // A stall always names a genuine cycle of blocked processes.
      ASSERT_GE(without.cycle.size(), 3U);
      std::set<Wait> waits(without.waits.begin(), without.waits.end());
      for (const Wait& e : cycle_edges(without.cycle)) EXPECT_TRUE(waits.contains(e));
    } else {
      EXPECT_EQ(without.joined_pairs, expected_join_pairs(input));
    }
  }
  EXPECT_GT(stalls_without_prefetch, 0);
}

}  // namespace
}  // namespace htapsim
