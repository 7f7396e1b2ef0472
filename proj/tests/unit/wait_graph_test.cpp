#include <gtest/gtest.h>

#include "htapsim/wait_graph.hpp"

namespace htapsim {
namespace {

constexpr Dxid A{1};
constexpr Dxid B{2};
constexpr Dxid C{3};
constexpr Dxid D{4};
const SegmentId kSeg0 = segment_id(0);
const SegmentId kSeg1 = segment_id(1);

WaitEdge edge(SegmentId s, Dxid w, Dxid h, EdgeKind k = EdgeKind::Solid) { return WaitEdge{s, w, h, k}; }

TEST(SnapshotLocal, TransactionLockWaitIsSolid) {
  LockTable t(kSeg0);
  t.register_txn(A, LocalXid{10});
  t.register_txn(B, LocalXid{11});
  ASSERT_EQ(t.acquire(B, LockTag::transaction_lock(kSeg0, LocalXid{10}), LockMode::Share, 0).outcome,
            AcquireOutcome::Blocked);
  const LocalWaitGraph g = snapshot_local(t, 5);
  EXPECT_EQ(g.edges, std::vector<WaitEdge>{edge(kSeg0, B, A)});
  EXPECT_EQ(g.collected_at, 5U);
}

TEST(SnapshotLocal, TupleLockWaitIsDotted) {
  // C updated the row; B holds its tuple lock and waits for C; A waits for
  // the tuple lock.
  LockTable t(kSeg1);
  t.register_txn(C, LocalXid{20});
  t.register_txn(B, LocalXid{21});
  t.register_txn(A, LocalXid{22});
  const LockTag tuple = LockTag::tuple_lock(kSeg1, "t1", Ctid{1});
  ASSERT_EQ(t.acquire(B, tuple, LockMode::Exclusive, 0).outcome, AcquireOutcome::Granted);
  ASSERT_EQ(t.acquire(B, LockTag::transaction_lock(kSeg1, LocalXid{20}), LockMode::Share, 0).outcome,
            AcquireOutcome::Blocked);
  ASSERT_EQ(t.acquire(A, tuple, LockMode::Exclusive, 0).outcome, AcquireOutcome::Blocked);
  const LocalWaitGraph g = snapshot_local(t, 0);
  const std::vector<WaitEdge> want{edge(kSeg1, A, B, EdgeKind::Dotted), edge(kSeg1, B, C)};
  EXPECT_EQ(g.edges, want);
}

TEST(SnapshotLocal, IdleSegmentHasNoEdges) {
  LockTable t(kSeg0);
  t.register_txn(A);
  EXPECT_TRUE(snapshot_local(t, 0).edges.empty());
}

TEST(SnapshotLocal, OneEdgePerBlockingHolder) {
  LockTable t(kSeg0);
  for (Dxid d : {A, B, C}) t.register_txn(d);
  const LockTag rel = LockTag::relation_lock(kSeg0, "t");
  ASSERT_EQ(t.acquire(A, rel, LockMode::RowShare, 0).outcome, AcquireOutcome::Granted);
  ASSERT_EQ(t.acquire(B, rel, LockMode::RowShare, 0).outcome, AcquireOutcome::Granted);
  ASSERT_EQ(t.acquire(C, rel, LockMode::Exclusive, 0).outcome, AcquireOutcome::Blocked);
  const LocalWaitGraph g = snapshot_local(t, 0);
  const std::vector<WaitEdge> want{edge(kSeg0, C, A), edge(kSeg0, C, B)};
  EXPECT_EQ(g.edges, want);
  for (const auto& e : g.edges) EXPECT_NE(e.waiter, e.holder);
}

TEST(SnapshotLocal, EdgeKindFollowsTagKind) {
  EXPECT_EQ(edge_kind_for(LockTagKind::Tuple), EdgeKind::Dotted);
  EXPECT_EQ(edge_kind_for(LockTagKind::Relation), EdgeKind::Solid);
  EXPECT_EQ(edge_kind_for(LockTagKind::Transaction), EdgeKind::Solid);
}

GlobalWaitForGraph coordinator_cycle_graph() {
  GlobalWaitForGraph g;
  g.add_edge(edge(kSeg1, A, B));
  g.add_edge(edge(kSeg0, B, D));
  g.add_edge(edge(kCoordinator, D, C));
  g.add_edge(edge(kSeg0, C, A));
  return g;
}

TEST(GlobalGraph, OutDegreeSumsLocalDegrees) {
  const GlobalWaitForGraph g = coordinator_cycle_graph();
  EXPECT_EQ(g.global_out_degree(C), 1U);
  EXPECT_EQ(g.local_out_degree(kCoordinator, C), 0U);
  EXPECT_EQ(g.local_out_degree(kCoordinator, D), 1U);
  EXPECT_EQ(g.global_out_degree(Dxid{99}), 0U);
  EXPECT_EQ(g.vertices(), (std::set<Dxid>{A, B, C, D}));
  EXPECT_EQ(g.edge_count(), 4U);
}

TEST(GlobalGraph, AddLocalReplacesSameSegment) {
  GlobalWaitForGraph g = coordinator_cycle_graph();
  g.add_local(LocalWaitGraph{kSeg0, {}, 0});
  EXPECT_EQ(g.edge_count(), 2U);
}

TEST(GraphDocument, RoundTrips) {
  GlobalWaitForGraph g = coordinator_cycle_graph();
  g.add_edge(edge(kSeg1, C, B, EdgeKind::Dotted));
  const GlobalWaitForGraph back = parse_graph_document(to_graph_document(g));
  EXPECT_EQ(back.edges(), g.edges());
}

TEST(GraphDocument, ParsesKindsAndSegments) {
  const auto g = parse_graph_document(
      R"({"vertices":[1,2],"edges":[{"segment":-1,"from":1,"to":2,"kind":"dotted"}]})");
  EXPECT_EQ(g.edges(), std::vector<WaitEdge>{edge(kCoordinator, A, B, EdgeKind::Dotted)});
}

TEST(GraphDocument, RejectsMalformedInput) {
  EXPECT_THROW(parse_graph_document("not json"), GraphFormatError);
  EXPECT_THROW(parse_graph_document(R"({"vertices":[]})"), GraphFormatError);
  EXPECT_THROW(parse_graph_document(R"({"edges":[{"segment":0,"from":1,"to":1,"kind":"solid"}]})"),
               GraphFormatError);
  EXPECT_THROW(parse_graph_document(R"({"edges":[{"segment":0,"from":1,"to":2,"kind":"wavy"}]})"),
               GraphFormatError);
  EXPECT_THROW(parse_graph_document(R"({"edges":[{"segment":0,"from":1,"kind":"solid"}]})"), GraphFormatError);
  EXPECT_THROW(
      parse_graph_document(R"({"vertices":[1],"edges":[{"segment":0,"from":1,"to":2,"kind":"solid"}]})"),
      GraphFormatError);
}

}  // namespace
}  // namespace htapsim
