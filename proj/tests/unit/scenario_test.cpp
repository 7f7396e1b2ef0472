#include <gtest/gtest.h>

#include "htapsim/scenario.hpp"

namespace htapsim {
namespace {

int error_line(const std::string& yaml) {
  try {
    parse_scenario(yaml);
  } catch (const ScenarioError& e) {
    return e.line();
  }
  return -1;
}

TEST(ParseScenario, FullDocument) {
  const Scenario sc = parse_scenario(R"y(
name: demo
config:
  segments: 2
  seed: 9
  gdd: {enabled: true, period: 50}
  one_phase_commit: false
  links: [{from: -1, to: 1, delay: 4}]
tables:
  - {name: t, rows: [[1, 2], [3, 4]]}
sessions:
  - id: A
    steps:
      - {seq: 1, sql: "update t set c2 = 1 where c1 = 1"}
      - {seq: 3, sql: "commit", at: 20}
expect:
  verdict: clean
  outcomes: {A: committed}
)y");
  EXPECT_EQ(sc.name, "demo");
  EXPECT_EQ(sc.config.segments, 2);
  EXPECT_EQ(sc.config.seed, 9U);
  EXPECT_EQ(sc.config.gdd.period, 50U);
  EXPECT_FALSE(sc.config.one_phase_commit);
  EXPECT_EQ(sc.config.link_delay.at({-1, 1}), 4U);
  ASSERT_EQ(sc.tables.size(), 1U);
  EXPECT_EQ(sc.tables[0].rows.size(), 2U);
  ASSERT_EQ(sc.sessions.size(), 1U);
  ASSERT_EQ(sc.sessions[0].steps.size(), 2U);
  EXPECT_EQ(sc.sessions[0].steps[1].not_before, Tick{20});
  EXPECT_EQ(sc.expect.verdict, DetectionOutcome::Clean);
  EXPECT_EQ(sc.expect.outcomes.at("A"), TxnOutcome::Committed);
}

TEST(ParseScenario, ErrorsCarryLineNumbers) {
  EXPECT_EQ(error_line("sessions:\n  - id: A\n    steps:\n      - {seq: 1, sql: \"drop t\"}\n"), 4);
  EXPECT_EQ(error_line("config:\n  segmentz: 3\n"), 2);
  EXPECT_EQ(error_line("tables:\n  - {name: t}\n  - {name: t}\n"), 3);
  EXPECT_EQ(error_line("sessions: [\n"), 2);
}

TEST(ParseScenario, RejectsBadSteps) {
  const char* twice = R"y(
sessions:
  - id: A
    steps:
      - {seq: 1, sql: "begin"}
      - {seq: 1, sql: "commit"}
)y";
  EXPECT_THROW(parse_scenario(twice), ScenarioError);
  const char* decreasing = R"y(
sessions:
  - id: A
    steps:
      - {seq: 2, sql: "begin"}
      - {seq: 1, sql: "commit"}
)y";
  EXPECT_THROW(parse_scenario(decreasing), ScenarioError);
  const char* across = R"y(
sessions:
  - id: A
    steps: [{seq: 1, sql: "begin"}]
  - id: B
    steps: [{seq: 1, sql: "begin"}]
)y";
  EXPECT_THROW(parse_scenario(across), ScenarioError);
  EXPECT_THROW(parse_scenario("sessions: [{id: A}, {id: A}]"), ScenarioError);
  EXPECT_THROW(parse_scenario("expect: {outcomes: {Z: committed}}"), ScenarioError);
  EXPECT_THROW(parse_scenario("expect: {verdict: maybe}"), ScenarioError);
  EXPECT_THROW(parse_scenario("config: {segments: 0}"), ScenarioError);
}

TEST(LoadScenario, MissingFile) {
  try {
    load_scenario("/nonexistent/x.yaml");
    FAIL();
  } catch (const ScenarioError& e) {
    EXPECT_EQ(e.line(), 0);
  }
}

TEST(RunScenario, ReportsUnmetExpectations) {
  const Scenario sc = parse_scenario(R"y(
tables: [{name: t, rows: [[1, 0]]}]
sessions:
  - id: A
    steps:
      - {seq: 1, sql: "update t set c2 = 1 where c1 = 1"}
      - {seq: 2, sql: "commit"}
expect:
  verdict: deadlock
  outcomes: {A: aborted}
)y");
  const ScenarioResult r = run_scenario(sc);
  EXPECT_FALSE(r.ok());
  EXPECT_EQ(r.failures.size(), 2U);
}

}  // namespace
}  // namespace htapsim
