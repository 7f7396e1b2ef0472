#include <gtest/gtest.h>

#include <set>

#include "htapsim/dtm.hpp"
#include "htapsim/rng.hpp"

namespace htapsim {
namespace {

const SegmentId kSeg0 = segment_id(0);
const SegmentId kSeg1 = segment_id(1);
const SegmentId kSeg2 = segment_id(2);

TEST(TransactionManager, FirstBegin) {
  TransactionManager tm;
  const auto& d = tm.begin(0);
  EXPECT_EQ(d.dxid, Dxid{1});
  EXPECT_EQ(tm.snapshot_of(Dxid{1}).in_progress, std::set<Dxid>{Dxid{1}});
  EXPECT_EQ(tm.snapshot_of(Dxid{1}).max_committed, Dxid{0});
}

TEST(TransactionManager, SnapshotReflectsUnfinishedAndMaxCommitted) {
  TransactionManager tm;
  for (int i = 0; i < 4; ++i) tm.begin(0);
  tm.mark_aborted(Dxid{1});
  tm.mark_committed(Dxid{2});
  const Dxid d = tm.begin(1).dxid;
  EXPECT_EQ(d, Dxid{5});
  EXPECT_EQ(tm.snapshot_of(d).in_progress, (std::set<Dxid>{Dxid{3}, Dxid{4}, Dxid{5}}));
  EXPECT_EQ(tm.snapshot_of(d).max_committed, Dxid{2});
}

TEST(TransactionManager, SnapshotsMatchReplayedHistory) {
  // Replays a random begin/commit/abort history and recomputes every
  // snapshot from the event list alone.
  Rng rng(3);
  TransactionManager tm;
  std::set<Dxid> unfinished;
  std::uint64_t max_committed = 0;
  std::uint64_t last = 0;
  for (int step = 0; step < 2000; ++step) {
    if (unfinished.empty() || rng.chance(2, 5)) {
      const Dxid d = tm.begin(static_cast<Tick>(step)).dxid;
      ASSERT_EQ(to_underlying(d), ++last);
      unfinished.insert(d);
      ASSERT_EQ(tm.snapshot_of(d).in_progress, unfinished);
      ASSERT_EQ(to_underlying(tm.snapshot_of(d).max_committed), max_committed);
      continue;
    }
    auto it = unfinished.begin();
    std::advance(it, static_cast<long>(rng.below(unfinished.size())));
    const Dxid d = *it;
    unfinished.erase(it);
    if (rng.chance(1, 2)) {
      tm.mark_committed(d);
      max_committed = std::max(max_committed, to_underlying(d));
    } else {
      tm.mark_aborted(d);
    }
    ASSERT_FALSE(tm.is_running(d));
  }
}

TEST(TransactionManager, MarkCommittedIsIdempotent) {
  TransactionManager tm;
  const Dxid d = tm.begin(0).dxid;
  tm.mark_committed(d);
  tm.mark_committed(d);
  EXPECT_EQ(tm.descriptor(d).state, TxnState::Committed);
  EXPECT_EQ(tm.max_committed(), d);
}

TEST(TransactionManager, TruncationHorizon) {
  TransactionManager tm;
  EXPECT_EQ(tm.truncation_horizon(), Dxid{1});
  // Every transaction but 5 and 9 commits right after it begins.
  for (std::uint64_t d = 1; d <= 9; ++d) {
    tm.begin(0);
    if (d != 5 && d != 9) tm.mark_committed(Dxid{d});
  }
  const auto h = tm.hold_snapshot();
  ASSERT_EQ(tm.held_snapshot(h).in_progress, (std::set<Dxid>{Dxid{5}, Dxid{9}}));
  EXPECT_EQ(tm.truncation_horizon(), Dxid{5});
  // The held snapshot still sees 5 as running.
  tm.mark_committed(Dxid{5});
  EXPECT_EQ(tm.truncation_horizon(), Dxid{5});
  tm.release_snapshot(h);
  // So does the snapshot of 9, which is still running.
  EXPECT_EQ(tm.truncation_horizon(), Dxid{5});
  tm.mark_committed(Dxid{9});
  EXPECT_EQ(tm.truncation_horizon(), tm.next_dxid());
}

TEST(TransactionManager, HeldSnapshotHoldsBackHorizon) {
  TransactionManager tm;
  tm.begin(0);
  const auto h = tm.hold_snapshot();
  tm.mark_committed(Dxid{1});
  EXPECT_EQ(tm.truncation_horizon(), Dxid{1});
  EXPECT_TRUE(tm.held_snapshot(h).in_progress.contains(Dxid{1}));
  tm.release_snapshot(h);
  EXPECT_EQ(tm.truncation_horizon(), Dxid{2});
}

TEST(SegmentXidMap, AssignAndLookup) {
  SegmentXidMap m(kSeg0, 100);
  const LocalXid x = m.assign(Dxid{4});
  EXPECT_EQ(x, LocalXid{100});
  EXPECT_EQ(m.local_of(Dxid{4}), x);
  EXPECT_EQ(m.status(x), LocalStatus::InProgress);
  EXPECT_THROW(m.entry(LocalXid{5}), IntegrityError);
  EXPECT_THROW(SegmentXidMap(kSeg0, 0), std::invalid_argument);
}

TEST(SegmentXidMap, LocalSnapshotListsInProgress) {
  SegmentXidMap m(kSeg0);
  const LocalXid a = m.assign(Dxid{1});
  const LocalXid b = m.assign(Dxid{2});
  m.mark_committed(a);
  const LocalSnapshot s = m.take_snapshot();
  EXPECT_EQ(s.in_progress, std::set<LocalXid>{b});
  EXPECT_EQ(s.xmax, LocalXid{3});
}

TEST(SegmentXidMap, TruncateSkipsUnfinishedAndIsIdempotent) {
  SegmentXidMap m(kSeg0);
  const LocalXid a = m.assign(Dxid{1});
  m.assign(Dxid{2});
  const LocalXid c = m.assign(Dxid{3});
  m.mark_committed(a);
  m.mark_aborted(c);
  EXPECT_EQ(m.truncate(Dxid{4}), 2U);
  EXPECT_EQ(m.truncate(Dxid{4}), 0U);
  EXPECT_EQ(m.mapped_count(), 1U);
  EXPECT_TRUE(m.entry(a).truncated);
  EXPECT_FALSE(m.entry(a).dxid);
}

struct VisibilityFixture : ::testing::Test {
  SegmentXidMap map{kSeg0};
  DistributedSnapshot snap;
  LocalSnapshot local;

  SelfView reader() const { return SelfView{std::nullopt, CommandId{0}, &snap, &local}; }
};

TEST_F(VisibilityFixture, OwnEarlierCommandVisibleCurrentInvisible) {
  const LocalXid me = map.assign(Dxid{1});
  const SelfView self{me, CommandId{2}, &snap, &local};
  EXPECT_TRUE(visible(VersionHeader{me, CommandId{1}, std::nullopt, {}}, self, map));
  EXPECT_FALSE(visible(VersionHeader{me, CommandId{2}, std::nullopt, {}}, self, map));
  // Deleted by an earlier command of the same transaction.
  EXPECT_FALSE(visible(VersionHeader{kFrozenXid, {}, me, CommandId{1}}, self, map));
}

TEST_F(VisibilityFixture, InProgressWriterInvisible) {
  for (int i = 0; i < 6; ++i) map.assign(Dxid{static_cast<std::uint64_t>(i + 1)});
  const LocalXid x = map.assign(Dxid{7});
  map.mark_committed(x);
  snap.in_progress = {Dxid{7}};
  snap.max_committed = Dxid{9};
  EXPECT_FALSE(visible(VersionHeader{x, {}, std::nullopt, {}}, reader(), map));
  snap.in_progress.clear();
  EXPECT_TRUE(visible(VersionHeader{x, {}, std::nullopt, {}}, reader(), map));
}

TEST_F(VisibilityFixture, LocallyCommittedButGloballyRunningInvisible) {
  const LocalXid x = map.assign(Dxid{5});
  map.mark_committed(x);
  snap.in_progress = {Dxid{5}, Dxid{6}};
  snap.max_committed = Dxid{4};
  EXPECT_FALSE(visible(VersionHeader{x, {}, std::nullopt, {}}, reader(), map));
}

TEST_F(VisibilityFixture, TruncatedXidFallsBackToLocalSnapshot) {
  const LocalXid x = map.assign(Dxid{7});
  map.mark_committed(x);
  map.truncate(Dxid{8});
  local = map.take_snapshot();
  EXPECT_TRUE(visible(VersionHeader{x, {}, std::nullopt, {}}, reader(), map));
  // A local snapshot from before x was assigned does not see it.
  local = LocalSnapshot{{}, x};
  EXPECT_FALSE(visible(VersionHeader{x, {}, std::nullopt, {}}, reader(), map));
}

TEST_F(VisibilityFixture, DeletedByCommittedTransactionInvisible) {
  const LocalXid x = map.assign(Dxid{1});
  map.mark_committed(x);
  snap.max_committed = Dxid{1};
  EXPECT_FALSE(visible(VersionHeader{kFrozenXid, {}, x, {}}, reader(), map));
  EXPECT_TRUE(visible(VersionHeader{kFrozenXid, {}, std::nullopt, {}}, reader(), map));
}

TEST_F(VisibilityFixture, AbortedWriterInvisible) {
  const LocalXid x = map.assign(Dxid{1});
  map.mark_aborted(x);
  snap.max_committed = Dxid{1};
  EXPECT_FALSE(visible(VersionHeader{x, {}, std::nullopt, {}}, reader(), map));
  // An aborted delete leaves the row visible.
  EXPECT_TRUE(visible(VersionHeader{kFrozenXid, {}, x, {}}, reader(), map));
}

TEST(CommitProtocol, ChoosesByWriteSegments) {
  EXPECT_EQ(choose_protocol(0, true), CommitProtocol::ReadOnly);
  EXPECT_EQ(choose_protocol(1, true), CommitProtocol::OnePhase);
  EXPECT_EQ(choose_protocol(1, false), CommitProtocol::TwoPhase);
  EXPECT_EQ(choose_protocol(2, true), CommitProtocol::TwoPhase);
}

TEST(CommitProtocol, ReadOnlySendsNothing) {
  const CommitOutcome o = run_commit_protocol({}, true);
  EXPECT_TRUE(o.committed);
  EXPECT_EQ(o.protocol, CommitProtocol::ReadOnly);
  EXPECT_EQ(o.accounting.total_messages(), 0U);
  EXPECT_EQ(o.accounting.total_fsyncs(), 0U);
}

TEST(CommitProtocol, OnePhaseCounts) {
  const CommitOutcome o = run_commit_protocol({kSeg1}, true);
  EXPECT_TRUE(o.committed);
  EXPECT_EQ(o.protocol, CommitProtocol::OnePhase);
  CommitAccounting want;
  want.message(MessageType::Commit) = 1;
  want.message(MessageType::CommitOk) = 1;
  want.fsync(FsyncSite::SegmentCommit) = 1;
  EXPECT_EQ(o.accounting, want);
}

TEST(CommitProtocol, TwoPhaseCountsPerSegment) {
  const std::vector<std::set<SegmentId>> write_sets{{kSeg0}, {kSeg0, kSeg2}, {kSeg0, kSeg1, kSeg2}};
  for (const auto& ws : write_sets) {
    const CommitOutcome o = run_commit_protocol(ws, false);
    const std::uint64_t k = ws.size();
    EXPECT_TRUE(o.committed);
    EXPECT_EQ(o.protocol, CommitProtocol::TwoPhase);
    CommitAccounting want;
    for (MessageType t : {MessageType::Prepare, MessageType::PrepareOk, MessageType::Commit, MessageType::CommitOk}) {
      want.message(t) = k;
    }
    want.fsync(FsyncSite::SegmentPrepare) = k;
    want.fsync(FsyncSite::CoordinatorCommit) = 1;
    want.fsync(FsyncSite::SegmentCommit) = k;
    EXPECT_EQ(o.accounting, want) << "k=" << k;
  }
}

TEST(CommitProtocol, FailedPrepareAbortsEverywhere) {
  const CommitOutcome o = run_commit_protocol({kSeg0, kSeg1, kSeg2}, true, {kSeg1});
  EXPECT_FALSE(o.committed);
  EXPECT_EQ(o.accounting.message(MessageType::Commit), 0U);
  EXPECT_EQ(o.accounting.fsync(FsyncSite::CoordinatorCommit), 0U);
  EXPECT_GE(o.accounting.message(MessageType::Abort), 1U);
}

TEST(CommitProtocol, RunIsDrivenByReplies) {
  CommitProtocolRun run(Dxid{1}, {kSeg0, kSeg1}, true);
  auto prepares = run.start();
  ASSERT_EQ(prepares.size(), 2U);
  std::vector<ProtocolMessage> commits;
  for (const auto& m : prepares) {
    EXPECT_EQ(m.type, MessageType::Prepare);
    const auto reply = run.on_segment_message(m);
    ASSERT_TRUE(reply);
    EXPECT_FALSE(run.decided());
    for (const auto& next : run.on_coordinator_message(*reply)) commits.push_back(next);
  }
  EXPECT_TRUE(run.decided());
  ASSERT_EQ(commits.size(), 2U);
  for (const auto& m : commits) {
    EXPECT_FALSE(run.done());
    run.on_coordinator_message(*run.on_segment_message(m));
  }
  EXPECT_TRUE(run.committed());
}

}  // namespace
}  // namespace htapsim
