#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "htapsim/gdd.hpp"
#include "htapsim/rng.hpp"

namespace htapsim {
namespace {

constexpr Dxid A{1};
constexpr Dxid B{2};
constexpr Dxid C{3};
constexpr Dxid D{4};
const SegmentId kSeg0 = segment_id(0);
const SegmentId kSeg1 = segment_id(1);

WaitEdge solid(SegmentId s, Dxid w, Dxid h) { return WaitEdge{s, w, h, EdgeKind::Solid}; }
WaitEdge dotted(SegmentId s, Dxid w, Dxid h) { return WaitEdge{s, w, h, EdgeKind::Dotted}; }

GlobalWaitForGraph graph(const std::vector<WaitEdge>& edges) {
  GlobalWaitForGraph g;
  for (const auto& e : edges) g.add_edge(e);
  return g;
}

std::string letter(Dxid d) { return std::string(1, static_cast<char>('A' + to_underlying(d) - 1)); }

LiveView all_running() {
  return LiveView{[](Dxid) { return true; }, {}};
}

TEST(Reduce, CrossingUpdatesKeepTheCycle) {
  const auto g = graph({solid(kSeg0, B, A), solid(kSeg1, A, B)});
  std::vector<RemovalStep> trace;
  EXPECT_EQ(reduce(g, &trace).edges(), g.edges());
  EXPECT_TRUE(trace.empty());
}

TEST(Reduce, MixedEdgesReduceToEmptyInOrder) {
  // A=1, B=2, C=3: B waits for A on seg0 and for C on seg1, A waits for B's
  // tuple lock on seg1.
  const auto g = graph({solid(kSeg0, B, A), solid(kSeg1, B, C), dotted(kSeg1, A, B)});
  std::vector<RemovalStep> trace;
  EXPECT_TRUE(reduce(g, &trace).empty());
  std::vector<std::string> steps;
  for (const auto& s : trace) steps.push_back(compact_step(s, letter));
  EXPECT_EQ(steps, (std::vector<std::string>{"R1 C", "R2 B@seg1", "R1 A"}));
  ASSERT_EQ(trace[1].removed, std::vector<WaitEdge>{dotted(kSeg1, A, B)});
}

TEST(Reduce, EmptyGraph) {
  std::vector<RemovalStep> trace;
  EXPECT_TRUE(reduce(GlobalWaitForGraph{}, &trace).empty());
  EXPECT_TRUE(trace.empty());
}

TEST(Reduce, DottedEdgeWithWaitingHolderStays) {
  // B holds the tuple lock and still waits on the same segment.
  const auto g = graph({dotted(kSeg1, A, B), solid(kSeg1, B, A)});
  EXPECT_EQ(reduce(g).edge_count(), 2U);
}

TEST(DescribeStep, LongForm) {
  const auto g = graph({solid(kSeg0, B, A), solid(kSeg1, B, C), dotted(kSeg1, A, B)});
  std::vector<RemovalStep> trace;
  reduce(g, &trace);
  ASSERT_EQ(trace.size(), 3U);
  EXPECT_EQ(describe_step(trace[0], letter), "deg(G)(C)=0: remove vertex C and all edges to C [seg1:B->C(solid)]");
  EXPECT_EQ(describe_step(trace[1], letter), "deg1(B)=0: remove dotted edges to B on seg1 [seg1:A->B(dotted)]");
}

TEST(Rules, ApplicableRulesAndApply) {
  auto g = graph({solid(kSeg0, B, A), solid(kSeg1, B, C), dotted(kSeg1, A, B)});
  const auto rules = applicable_rules(g);
  const RuleApplication r1c{ReductionRule::ZeroGlobalOutDegree, C, kCoordinator};
  ASSERT_NE(std::find(rules.begin(), rules.end(), r1c), rules.end());
  EXPECT_EQ(apply_rule(g, r1c), std::vector<WaitEdge>{solid(kSeg1, B, C)});
  EXPECT_TRUE(apply_rule(g, r1c).empty());
  EXPECT_TRUE(apply_rule(g, RuleApplication{ReductionRule::ZeroGlobalOutDegree, B, kCoordinator}).empty());
}

TEST(Detect, CrossingUpdatesDeadlockVictimIsYoungest) {
  const auto v = detect(graph({solid(kSeg0, B, A), solid(kSeg1, A, B)}), all_running());
  EXPECT_EQ(v.outcome, DetectionOutcome::Deadlock);
  EXPECT_EQ(v.victim(), B);
  ASSERT_GE(v.cycle.size(), 3U);
  EXPECT_EQ(v.cycle.front(), v.cycle.back());
}

TEST(Detect, CoordinatorCycleDeadlock) {
  const auto g =
      graph({solid(kSeg1, A, B), solid(kSeg0, B, D), solid(kCoordinator, D, C), solid(kSeg0, C, A)});
  const auto v = detect(g, all_running());
  EXPECT_EQ(v.outcome, DetectionOutcome::Deadlock);
  EXPECT_EQ(v.victims, std::vector<Dxid>{D});
  EXPECT_EQ(v.residual_edges.size(), 4U);
}

TEST(Detect, FinishedResidualTransactionIsStale) {
  const auto g = graph({solid(kSeg0, B, A), solid(kSeg1, A, B)});
  const auto v = detect(g, LiveView{[](Dxid d) { return d != A; }, {}});
  EXPECT_EQ(v.outcome, DetectionOutcome::Stale);
  EXPECT_TRUE(v.victims.empty());
}

TEST(Detect, VanishedEdgeIsStale) {
  const auto g = graph({solid(kSeg0, B, A), solid(kSeg1, A, B)});
  const auto v = detect(g, LiveView{[](Dxid) { return true; }, [](const WaitEdge& e) { return e.waiter != A; }});
  EXPECT_EQ(v.outcome, DetectionOutcome::Stale);
}

TEST(Detect, CleanHasNoVictim) {
  const auto v = detect(graph({solid(kSeg0, B, A)}), all_running());
  EXPECT_EQ(v.outcome, DetectionOutcome::Clean);
  EXPECT_FALSE(v.victim());
  EXPECT_TRUE(v.residual_edges.empty());
}

TEST(Victims, OnePerWeaklyConnectedComponent) {
  const Dxid E{5};
  const Dxid F{6};
  const std::vector<WaitEdge> residual{solid(kSeg0, A, B), solid(kSeg1, B, A), solid(kSeg0, C, D),
                                       solid(kSeg1, D, C), solid(kSeg0, F, C), solid(kSeg0, E, A)};
  // F and E only wait on a cycle, so they are not chosen.
  EXPECT_EQ(select_victims(residual, VictimPolicy::YoungestDxid), (std::vector<Dxid>{D, B}));
}

TEST(FindCycle, AcyclicIsEmpty) {
  EXPECT_TRUE(find_cycle({solid(kSeg0, A, B), solid(kSeg0, B, C)}).empty());
  const auto c = find_cycle({solid(kSeg0, A, B), solid(kSeg0, B, C), solid(kSeg1, C, A)});
  EXPECT_EQ(c.size(), 4U);
}

class RecordingCluster final : public ClusterControl {
 public:
  std::set<Dxid> finished;
  std::vector<Dxid> aborted;
  bool is_running(Dxid d) const override { return !finished.contains(d); }
  void abort_transaction(Dxid d, std::string_view) override {
    aborted.push_back(d);
    finished.insert(d);
  }
};

TEST(BreakDeadlock, AbortsVictimsThenRedetectsClean) {
  const auto g = graph({solid(kSeg0, B, A), solid(kSeg1, A, B)});
  RecordingCluster cluster;
  const auto v = detect(g, all_running());
  EXPECT_EQ(break_deadlock(v, cluster), std::vector<Dxid>{B});
  // With B gone its edges disappear.
  EXPECT_EQ(detect(graph({}), all_running()).outcome, DetectionOutcome::Clean);
  EXPECT_EQ(detect(g, LiveView{[&](Dxid d) { return cluster.is_running(d); }, {}}).outcome,
            DetectionOutcome::Stale);
}

TEST(BreakDeadlock, FinishedVictimIsNoOp) {
  const auto v = detect(graph({solid(kSeg0, B, A), solid(kSeg1, A, B)}), all_running());
  RecordingCluster cluster;
  cluster.finished.insert(B);
  EXPECT_TRUE(break_deadlock(v, cluster).empty());
  EXPECT_TRUE(cluster.aborted.empty());
}

TEST(BreakDeadlock, CleanVerdictIsPreconditionViolation) {
  RecordingCluster cluster;
  EXPECT_THROW(break_deadlock(DetectionVerdict{}, cluster), ProtocolError);
}

TEST(GddConfig, PeriodMustBePositive) {
  GddConfig c;
  c.period = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

GlobalWaitForGraph random_graph(Rng& rng) {
  GlobalWaitForGraph g;
  const auto n = static_cast<std::uint64_t>(rng.between(2, 7));
  const auto edges = rng.between(1, 12);
  for (std::int64_t i = 0; i < edges; ++i) {
    const Dxid w{1 + rng.below(n)};
    const Dxid h{1 + rng.below(n)};
    if (w == h) continue;
    const SegmentId s = segment_id(static_cast<int>(rng.between(-1, 2)));
    g.add_edge(WaitEdge{s, w, h, rng.chance(1, 2) ? EdgeKind::Dotted : EdgeKind::Solid});
  }
  return g;
}

TEST(Reduce, ConfluentUnderRandomRuleOrder) {
  Rng rng(7);
  for (int i = 0; i < 500; ++i) {
    const GlobalWaitForGraph g = random_graph(rng);
    const auto canonical = reduce(g).edges();
    for (int order = 0; order < 5; ++order) {
      GlobalWaitForGraph h = g;
      for (auto rules = applicable_rules(h); !rules.empty(); rules = applicable_rules(h)) {
        apply_rule(h, rules[rng.below(rules.size())]);
      }
      ASSERT_EQ(h.edges(), canonical) << to_graph_document(g);
    }
  }
}

TEST(Reduce, NeverRemovesAnEdgeOfAFinalCycle) {
  Rng rng(11);
  for (int i = 0; i < 500; ++i) {
    const GlobalWaitForGraph g = random_graph(rng);
    const auto residual = reduce(g).edges();
    // Any cycle made of solid edges only can never be reduced.
    std::vector<WaitEdge> solids;
    for (const auto& e : g.edges()) {
      if (e.kind == EdgeKind::Solid) solids.push_back(e);
    }
    for (const Dxid v : find_cycle(solids)) {
      EXPECT_GT(std::count_if(residual.begin(), residual.end(), [v](const WaitEdge& e) { return e.waiter == v; }), 0);
    }
  }
}

}  // namespace
}  // namespace htapsim
