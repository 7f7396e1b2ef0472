#include <gtest/gtest.h>

#include <algorithm>

#include <map>

#include "htapsim/segment_store.hpp"

namespace htapsim {
namespace {

const SegmentId kSeg = segment_id(0);

TEST(Route, DeterministicAndInRange) {
  for (std::int64_t k = -50; k < 50; ++k) {
    EXPECT_EQ(route(k, 3), route(k, 3));
    EXPECT_GE(to_underlying(route(k, 3)), 0);
    EXPECT_LT(to_underlying(route(k, 3)), 3);
    EXPECT_EQ(route(k, 1), kSeg);
  }
}

TEST(Route, SpreadsKeysAcrossSegments) {
  std::map<int, int> counts;
  for (std::int64_t k = 1; k <= 100; ++k) ++counts[to_underlying(route(k, 3))];
  ASSERT_EQ(counts.size(), 3U);
  // Chi-square against uniform, 2 degrees of freedom, 1% level.
  double chi2 = 0;
  for (const auto& [s, n] : counts) chi2 += (n - 100.0 / 3) * (n - 100.0 / 3) / (100.0 / 3);
  EXPECT_LT(chi2, 9.21);
}

TEST(TableDef, ValidatesColumns) {
  EXPECT_NO_THROW(TableDef{"t"}.validate());
  EXPECT_THROW((TableDef{"t", {"c1"}, "c1"}.validate()), std::invalid_argument);
  EXPECT_THROW((TableDef{"t", {"c1", "c2"}, "c3"}.validate()), std::invalid_argument);
  EXPECT_THROW(TableDef{"t"}.column_index("c9"), StatementError);
}

TEST(Predicates, MatchAndPinnedKeys) {
  const TableDef t{"t"};
  const Statement st = parse_statement("select * from t where c1 = 1 or c1 = 4 and c2 = 2");
  EXPECT_TRUE(matches(st.where, t, Row{1, 9}));
  EXPECT_TRUE(matches(st.where, t, Row{4, 2}));
  EXPECT_FALSE(matches(st.where, t, Row{4, 3}));
  EXPECT_EQ(pinned_keys(st.where, t), (std::set<std::int64_t>{1, 4}));
  EXPECT_FALSE(pinned_keys(parse_statement("select * from t where c2 = 3").where, t));
  EXPECT_FALSE(pinned_keys(parse_statement("select * from t").where, t));
  // Contradictory conjunction pins nothing.
  EXPECT_EQ(pinned_keys(parse_statement("select * from t where c1 = 1 and c1 = 2").where, t),
            std::set<std::int64_t>{});
}

TEST(Predicates, ApplyAssignments) {
  const TableDef t{"t"};
  EXPECT_EQ(apply_assignments(parse_statement("update t set c2 = c2 + 2").set, t, Row{1, 5}), (Row{1, 7}));
  EXPECT_EQ(apply_assignments(parse_statement("update t set c2 = 0").set, t, Row{1, 5}), (Row{1, 0}));
}

TEST(Predicates, KeyUpdateRejected) {
  EXPECT_THROW(check_statement(parse_statement("update t set c1 = 3"), TableDef{"t"}), StatementError);
  EXPECT_NO_THROW(check_statement(parse_statement("update t set c2 = 3"), TableDef{"t"}));
}

TEST(RelationLockMode, ByStatementAndMode) {
  EXPECT_EQ(relation_lock_mode(parse_statement("update t set c2 = 1"), false), LockMode::RowExclusive);
  EXPECT_EQ(relation_lock_mode(parse_statement("update t set c2 = 1"), true), LockMode::Exclusive);
  EXPECT_EQ(relation_lock_mode(parse_statement("delete from t"), true), LockMode::Exclusive);
  EXPECT_EQ(relation_lock_mode(parse_statement("insert into t values (1, 1)"), true), LockMode::RowExclusive);
  EXPECT_EQ(relation_lock_mode(parse_statement("select * from t"), false), LockMode::AccessShare);
  EXPECT_EQ(relation_lock_mode(parse_statement("lock t in share mode"), false), LockMode::Share);
}

// One segment holding every row, driven by hand.
class SegmentFixture : public ::testing::Test {
 protected:
  struct Txn {
    Dxid dxid{};
    LocalXid xid{};
    LocalSnapshot local;
    std::uint32_t command = 0;
  };

  TransactionManager tm;
  SegmentXidMap xids{kSeg};
  LockTable locks{kSeg};
  SegmentStore store{kSeg};

  void SetUp() override {
    store.create_table(TableDef{"t"});
    for (std::int64_t k = 1; k <= 3; ++k) store.insert("t", Row{k, 10 * k}, kFrozenXid, CommandId{0});
  }

  Txn begin() {
    Txn t;
    t.dxid = tm.begin(0).dxid;
    t.xid = xids.assign(t.dxid);
    locks.register_txn(t.dxid, t.xid);
    t.local = xids.take_snapshot();
    return t;
  }

  ExecContext ctx(Txn& t) {
    return ExecContext{t.dxid, t.xid,  CommandId{t.command}, &tm.snapshot_of(t.dxid), &t.local, &locks, &store,
                       &xids,  false, 0};
  }

  ExecResult run(Txn& t, SegmentExecution& e) { return e.run(ctx(t)); }

  static SegmentExecution exec(const std::string& sql, std::vector<Row> rows = {}) {
    return SegmentExecution(parse_statement(sql), std::move(rows), false);
  }

  std::vector<Row> scan(Txn& t) {
    auto rows = store.scan("t", SelfView{t.xid, CommandId{t.command}, &tm.snapshot_of(t.dxid), &t.local}, xids);
    std::sort(rows.begin(), rows.end());
    return rows;
  }

  void commit(Txn& t) {
    xids.mark_committed(t.xid);
    tm.mark_committed(t.dxid);
  }
  void abort(Txn& t) {
    xids.mark_aborted(t.xid);
    tm.mark_aborted(t.dxid);
  }
};

TEST_F(SegmentFixture, UpdateWritesSuccessorVersion) {
  Txn a = begin();
  a.command = 1;
  auto e = exec("update t set c2 = c2 + 1 where c1 = 2");
  const ExecResult r = run(a, e);
  EXPECT_EQ(r.status, ExecStatus::Done);
  EXPECT_EQ(r.count, 1U);
  EXPECT_TRUE(e.wrote());
  a.command = 2;
  EXPECT_EQ(scan(a), (std::vector<Row>{{1, 10}, {2, 21}, {3, 30}}));
  EXPECT_FALSE(store.check_chains(xids));
  EXPECT_TRUE(locks.held_by(a.dxid).size() >= 1);
}

TEST_F(SegmentFixture, ZeroMatchingRowsTakesNoTupleLocks) {
  Txn a = begin();
  auto e = exec("update t set c2 = 0 where c1 = 99");
  const ExecResult r = run(a, e);
  EXPECT_EQ(r.status, ExecStatus::Done);
  EXPECT_EQ(r.count, 0U);
  EXPECT_FALSE(e.wrote());
  for (const auto& req : locks.held_by(a.dxid)) EXPECT_NE(req.tag.kind, LockTagKind::Tuple);
}

TEST_F(SegmentFixture, ConcurrentReaderSeesPreWriteValues) {
  Txn a = begin();
  Txn b = begin();
  auto e = exec("update t set c2 = 0 where c1 = 1");
  ASSERT_EQ(run(a, e).status, ExecStatus::Done);
  EXPECT_EQ(scan(b), (std::vector<Row>{{1, 10}, {2, 20}, {3, 30}}));
  commit(a);
  // b's snapshot predates a's commit.
  EXPECT_EQ(scan(b).front(), (Row{1, 10}));
  Txn c = begin();
  EXPECT_EQ(scan(c).front(), (Row{1, 0}));
}

TEST_F(SegmentFixture, SecondUpdaterWaitsThenFailsAfterCommit) {
  Txn a = begin();
  Txn b = begin();
  auto ea = exec("update t set c2 = 1 where c1 = 1");
  ASSERT_EQ(run(a, ea).status, ExecStatus::Done);
  auto eb = exec("update t set c2 = 2 where c1 = 1");
  const ExecResult blocked = run(b, eb);
  ASSERT_EQ(blocked.status, ExecStatus::Blocked);
  ASSERT_TRUE(blocked.waiting_on);
  EXPECT_EQ(blocked.waiting_on->kind, LockTagKind::Transaction);
  commit(a);
  const auto promoted = locks.release_all(a.dxid);
  ASSERT_EQ(promoted.size(), 1U);
  EXPECT_EQ(promoted[0].txn, b.dxid);
  const ExecResult r = run(b, eb);
  EXPECT_EQ(r.status, ExecStatus::Failed);
  EXPECT_NE(r.error.find("serialize"), std::string::npos);
}

TEST_F(SegmentFixture, SecondUpdaterProceedsAfterAbort) {
  Txn a = begin();
  Txn b = begin();
  auto ea = exec("update t set c2 = 1 where c1 = 1");
  ASSERT_EQ(run(a, ea).status, ExecStatus::Done);
  auto eb = exec("update t set c2 = c2 + 5 where c1 = 1");
  ASSERT_EQ(run(b, eb).status, ExecStatus::Blocked);
  abort(a);
  locks.release_all(a.dxid);
  const ExecResult r = run(b, eb);
  EXPECT_EQ(r.status, ExecStatus::Done);
  EXPECT_EQ(r.count, 1U);
  commit(b);
  EXPECT_EQ(store.committed_rows("t", xids).front(), (Row{1, 15}));
  EXPECT_FALSE(store.check_chains(xids));
}

TEST_F(SegmentFixture, ThirdUpdaterWaitsOnTupleLock) {
  Txn a = begin();
  Txn b = begin();
  Txn c = begin();
  auto ea = exec("update t set c2 = 1 where c1 = 1");
  ASSERT_EQ(run(a, ea).status, ExecStatus::Done);
  auto eb = exec("update t set c2 = 2 where c1 = 1");
  ASSERT_EQ(run(b, eb).status, ExecStatus::Blocked);
  auto ec = exec("update t set c2 = 3 where c1 = 1");
  const ExecResult r = run(c, ec);
  ASSERT_EQ(r.status, ExecStatus::Blocked);
  ASSERT_TRUE(r.waiting_on);
  EXPECT_EQ(r.waiting_on->kind, LockTagKind::Tuple);
}

TEST_F(SegmentFixture, InsertAndDeleteAreVisibleToLaterCommands) {
  Txn a = begin();
  a.command = 1;
  auto ins = exec("insert into t values (4, 40)", {Row{4, 40}});
  ASSERT_EQ(run(a, ins).status, ExecStatus::Done);
  a.command = 2;
  auto del = exec("delete from t where c1 = 1");
  const ExecResult r = run(a, del);
  EXPECT_EQ(r.count, 1U);
  a.command = 3;
  EXPECT_EQ(scan(a), (std::vector<Row>{{2, 20}, {3, 30}, {4, 40}}));
  commit(a);
  EXPECT_EQ(store.committed_rows("t", xids), (std::vector<Row>{{2, 20}, {3, 30}, {4, 40}}));
}

TEST_F(SegmentFixture, SelectReturnsMatchingRows) {
  Txn a = begin();
  auto sel = exec("select * from t where c2 = 20");
  const ExecResult r = run(a, sel);
  EXPECT_EQ(r.status, ExecStatus::Done);
  EXPECT_EQ(r.rows, (std::vector<Row>{{2, 20}}));
}

TEST_F(SegmentFixture, ExplicitLockBlocksUpdate) {
  Txn a = begin();
  Txn b = begin();
  auto lock = exec("lock t");
  ASSERT_EQ(run(a, lock).status, ExecStatus::Done);
  auto upd = exec("update t set c2 = 1 where c1 = 1");
  const ExecResult r = run(b, upd);
  ASSERT_EQ(r.status, ExecStatus::Blocked);
  EXPECT_EQ(r.waiting_on->kind, LockTagKind::Relation);
}

TEST(SegmentStore, ScanOfEmptyTable) {
  SegmentStore s(kSeg);
  SegmentXidMap x(kSeg);
  s.create_table(TableDef{"e"});
  DistributedSnapshot snap;
  LocalSnapshot local;
  EXPECT_TRUE(s.scan("e", SelfView{std::nullopt, CommandId{0}, &snap, &local}, x).empty());
  EXPECT_TRUE(s.has_table("e"));
  EXPECT_FALSE(s.has_table("f"));
}

}  // namespace
}  // namespace htapsim
