#include <gtest/gtest.h>

#include "htapsim/statement.hpp"

namespace htapsim {
namespace {

TEST(ParseStatement, TransactionControl) {
  EXPECT_EQ(parse_statement("begin").kind, StatementKind::Begin);
  EXPECT_EQ(parse_statement("COMMIT").kind, StatementKind::Commit);
  EXPECT_EQ(parse_statement("abort").kind, StatementKind::Abort);
  EXPECT_EQ(parse_statement("rollback;").kind, StatementKind::Abort);
}

TEST(ParseStatement, UpdateWithIncrementAndDisjunction) {
  const Statement st = parse_statement("update t1 set c2 = c2 + 5 where c1 = 1 or c1 = 4 and c2 = 3");
  EXPECT_EQ(st.kind, StatementKind::Update);
  EXPECT_EQ(st.table, "t1");
  ASSERT_EQ(st.set.size(), 1U);
  EXPECT_TRUE(st.set[0].increment);
  EXPECT_EQ(st.set[0].value, 5);
  ASSERT_EQ(st.where.disjuncts.size(), 2U);
  EXPECT_EQ(st.where.disjuncts[1].size(), 2U);
  EXPECT_EQ(st.where.disjuncts[1][1].column, "c2");
  EXPECT_TRUE(st.is_dml());
}

TEST(ParseStatement, UpdateAssignsConstant) {
  const Statement st = parse_statement("update t set c2 = -3");
  ASSERT_EQ(st.set.size(), 1U);
  EXPECT_FALSE(st.set[0].increment);
  EXPECT_EQ(st.set[0].value, -3);
  EXPECT_TRUE(st.where.always_true());
}

TEST(ParseStatement, InsertValuesAndSeries) {
  const Statement v = parse_statement("insert into t values (1, 2), (3, 4)");
  EXPECT_EQ(v.rows, (std::vector<std::vector<std::int64_t>>{{1, 2}, {3, 4}}));
  const Statement s = parse_statement("INSERT INTO t SELECT 1, generate_series(1,10)");
  ASSERT_EQ(s.rows.size(), 10U);
  EXPECT_EQ(s.rows.front(), (std::vector<std::int64_t>{1, 1}));
  EXPECT_EQ(s.rows.back(), (std::vector<std::int64_t>{1, 10}));
}

TEST(ParseStatement, DeleteSelectLock) {
  EXPECT_EQ(parse_statement("delete from t where c1 = 2").kind, StatementKind::Delete);
  const Statement sel = parse_statement("select * from t where c2 = 7");
  EXPECT_EQ(sel.kind, StatementKind::Select);
  EXPECT_FALSE(sel.is_dml());
  const Statement lock = parse_statement("lock t2");
  EXPECT_EQ(lock.kind, StatementKind::Lock);
  EXPECT_EQ(lock.lock_mode, LockMode::AccessExclusive);
  EXPECT_EQ(parse_statement("lock table t2 in share row exclusive mode").lock_mode, LockMode::ShareRowExclusive);
  EXPECT_EQ(parse_statement("lock t2 in RowShare mode").lock_mode, LockMode::RowShare);
}

TEST(ParseStatement, KeepsText) { EXPECT_EQ(parse_statement("select * from t").text, "select * from t"); }

TEST(ParseStatement, RejectsMalformed) {
  for (const char* bad : {"", "drop table t", "update t", "update t set c2 = c3 + 1", "select c1 from t",
                          "insert into t values (1)", "insert into t values (1, 2", "lock t in funny mode",
                          "delete t", "select * from t where c1 > 3", "update t set c2 = c2 + x"}) {
    EXPECT_THROW(parse_statement(bad), StatementError) << bad;
  }
}

}  // namespace
}  // namespace htapsim
