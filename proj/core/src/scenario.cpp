#include "htapsim/scenario.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

namespace htapsim {

ScenarioError::ScenarioError(int line, const std::string& message)
    : std::runtime_error(line > 0 ? fmt::format("line {}: {}", line, message) : message), line_(line) {}

namespace {

int line_of(const YAML::Node& n) { return n.Mark().line >= 0 ? n.Mark().line + 1 : 0; }

[[noreturn]] void fail(const YAML::Node& n, const std::string& message) { throw ScenarioError(line_of(n), message); }

void expect_map(const YAML::Node& n, std::string_view what) {
  if (!n.IsMap()) fail(n, fmt::format("{} must be a mapping", what));
}

void expect_seq(const YAML::Node& n, std::string_view what) {
  if (!n.IsSequence()) fail(n, fmt::format("{} must be a list", what));
}

void only_keys(const YAML::Node& n, std::initializer_list<std::string_view> allowed, std::string_view what) {
  for (const auto& kv : n) {
    const auto key = kv.first.as<std::string>();
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      fail(kv.first, fmt::format("unknown key '{}' in {}", key, what));
    }
  }
}

template <typename T>
T scalar(const YAML::Node& n, std::string_view what) {
  if (!n.IsScalar()) fail(n, fmt::format("{} must be a scalar", what));
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    fail(n, fmt::format("invalid value '{}' for {}", n.Scalar(), what));
  }
}

std::string text(const YAML::Node& n, std::string_view what) { return scalar<std::string>(n, what); }

void parse_config(const YAML::Node& n, SimConfig& c) {
  expect_map(n, "config");
  only_keys(n,
            {"segments", "seed", "gdd", "legacy_locking", "one_phase_commit", "message_delay", "exec_cost",
             "fsync_cost", "delay_jitter", "links", "failing_prepare", "cores", "global_memory", "global_memory_mb",
             "max_ticks"},
            "config");
  if (auto v = n["segments"]) c.segments = scalar<int>(v, "segments");
  if (auto v = n["seed"]) c.seed = scalar<std::uint64_t>(v, "seed");
  if (auto v = n["legacy_locking"]) c.legacy_locking = scalar<bool>(v, "legacy_locking");
  if (auto v = n["one_phase_commit"]) c.one_phase_commit = scalar<bool>(v, "one_phase_commit");
  if (auto v = n["message_delay"]) c.message_delay = scalar<Tick>(v, "message_delay");
  if (auto v = n["exec_cost"]) c.exec_cost = scalar<Tick>(v, "exec_cost");
  if (auto v = n["fsync_cost"]) c.fsync_cost = scalar<Tick>(v, "fsync_cost");
  if (auto v = n["delay_jitter"]) c.delay_jitter = scalar<Tick>(v, "delay_jitter");
  if (auto v = n["cores"]) c.cores = scalar<int>(v, "cores");
  if (auto v = n["max_ticks"]) c.max_ticks = scalar<Tick>(v, "max_ticks");
  if (auto v = n["global_memory"]) c.global_memory = scalar<std::uint64_t>(v, "global_memory");
  if (auto v = n["global_memory_mb"]) c.global_memory = scalar<std::uint64_t>(v, "global_memory_mb") << 20U;
  if (auto g = n["gdd"]) {
    expect_map(g, "gdd");
    only_keys(g, {"enabled", "period", "skew"}, "gdd");
    if (auto v = g["enabled"]) c.gdd_enabled = scalar<bool>(v, "gdd.enabled");
    if (auto v = g["period"]) c.gdd.period = scalar<Tick>(v, "gdd.period");
    if (auto v = g["skew"]) c.gdd.collection_skew = scalar<Tick>(v, "gdd.skew");
  }
  if (auto links = n["links"]) {
    expect_seq(links, "links");
    for (const auto& l : links) {
      expect_map(l, "link");
      only_keys(l, {"from", "to", "delay"}, "link");
      if (!l["from"] || !l["to"] || !l["delay"]) fail(l, "a link needs from, to and delay");
      c.link_delay[{scalar<int>(l["from"], "from"), scalar<int>(l["to"], "to")}] = scalar<Tick>(l["delay"], "delay");
    }
  }
  if (auto f = n["failing_prepare"]) {
    expect_seq(f, "failing_prepare");
    for (const auto& s : f) c.failing_prepare.insert(segment_id(scalar<int>(s, "segment")));
  }
}

TableSpec parse_table(const YAML::Node& n) {
  expect_map(n, "table");
  only_keys(n, {"name", "columns", "distributed_by", "rows"}, "table");
  TableSpec t;
  if (!n["name"]) fail(n, "a table needs a name");
  t.def.name = text(n["name"], "table name");
  if (auto cols = n["columns"]) {
    expect_seq(cols, "columns");
    t.def.columns.clear();
    for (const auto& c : cols) t.def.columns.push_back(text(c, "column"));
  }
  if (auto d = n["distributed_by"]) t.def.distributed_by = text(d, "distributed_by");
  try {
    t.def.validate();
  } catch (const std::exception& e) {
    fail(n, e.what());
  }
  if (auto rows = n["rows"]) {
    expect_seq(rows, "rows");
    for (const auto& r : rows) {
      if (!r.IsSequence() || r.size() != 2) fail(r, "a row is a list of two integers");
      t.rows.push_back(Row{scalar<std::int64_t>(r[0], "value"), scalar<std::int64_t>(r[1], "value")});
    }
  }
  return t;
}

ResourceGroupConfig parse_group(const YAML::Node& n) {
  expect_map(n, "group");
  only_keys(n, {"name", "CONCURRENCY", "MEMORY_LIMIT", "MEMORY_SHARED_QUOTA", "CPU_RATE_LIMIT", "CPUSET"}, "group");
  ResourceGroupConfig g;
  if (!n["name"]) fail(n, "a group needs a name");
  g.name = text(n["name"], "group name");
  if (auto v = n["CONCURRENCY"]) g.concurrency = scalar<int>(v, "CONCURRENCY");
  if (auto v = n["MEMORY_LIMIT"]) g.memory_limit = scalar<int>(v, "MEMORY_LIMIT");
  if (auto v = n["MEMORY_SHARED_QUOTA"]) g.memory_shared_quota = scalar<int>(v, "MEMORY_SHARED_QUOTA");
  if (auto v = n["CPU_RATE_LIMIT"]) g.cpu_rate_limit = scalar<int>(v, "CPU_RATE_LIMIT");
  if (auto v = n["CPUSET"]) {
    try {
      g.cpuset = parse_cpuset(text(v, "CPUSET"));
    } catch (const std::exception& e) {
      fail(v, e.what());
    }
  }
  try {
    g.validate();
  } catch (const std::exception& e) {
    fail(n, e.what());
  }
  return g;
}

SessionStep parse_step(const YAML::Node& n) {
  expect_map(n, "step");
  only_keys(n, {"seq", "sql", "mem", "cpu", "processes", "at"}, "step");
  if (!n["seq"] || !n["sql"]) fail(n, "a step needs seq and sql");
  SessionStep s;
  s.seq = scalar<std::uint64_t>(n["seq"], "seq");
  try {
    s.statement = parse_statement(text(n["sql"], "sql"));
  } catch (const StatementError& e) {
    fail(n["sql"], e.what());
  }
  if (auto v = n["mem"]) s.mem = scalar<std::int64_t>(v, "mem");
  if (s.mem && *s.mem < 0) fail(n["mem"], "mem must not be negative");
  if (auto v = n["cpu"]) s.cpu = scalar<std::uint64_t>(v, "cpu");
  if (auto v = n["processes"]) s.cpu_processes = scalar<unsigned>(v, "processes");
  if (s.cpu_processes == 0) fail(n["processes"], "processes must be at least 1");
  if (auto v = n["at"]) s.not_before = scalar<Tick>(v, "at");
  return s;
}

std::optional<DetectionOutcome> parse_verdict(const YAML::Node& n) {
  const std::string v = text(n, "verdict");
  if (v == "clean" || v == "CLEAN") return DetectionOutcome::Clean;
  if (v == "deadlock" || v == "DEADLOCK") return DetectionOutcome::Deadlock;
  fail(n, fmt::format("verdict must be clean or deadlock, not '{}'", v));
}

TxnOutcome parse_outcome(const YAML::Node& n) {
  const std::string v = text(n, "outcome");
  if (v == "committed") return TxnOutcome::Committed;
  if (v == "aborted") return TxnOutcome::Aborted;
  if (v == "open") return TxnOutcome::Open;
  fail(n, fmt::format("outcome must be committed, aborted or open, not '{}'", v));
}

ScenarioExpect parse_expect(const YAML::Node& n) {
  expect_map(n, "expect");
  only_keys(n, {"verdict", "victims", "outcomes", "gdd_trace"}, "expect");
  ScenarioExpect e;
  if (auto v = n["verdict"]) e.verdict = parse_verdict(v);
  if (auto v = n["victims"]) {
    expect_seq(v, "victims");
    e.victims.emplace();
    for (const auto& x : v) e.victims->push_back(text(x, "victim"));
  }
  if (auto v = n["outcomes"]) {
    expect_map(v, "outcomes");
    for (const auto& kv : v) e.outcomes[text(kv.first, "session")] = parse_outcome(kv.second);
  }
  if (auto v = n["gdd_trace"]) {
    expect_seq(v, "gdd_trace");
    e.gdd_trace.emplace();
    for (const auto& x : v) e.gdd_trace->push_back(text(x, "gdd_trace step"));
  }
  return e;
}

}  // namespace

Scenario parse_scenario(std::string_view text_in) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text_in));
  } catch (const YAML::ParserException& e) {
    throw ScenarioError(e.mark.line + 1, e.msg);
  }
  Scenario sc;
  if (root.IsNull()) return sc;
  expect_map(root, "scenario");
  only_keys(root, {"name", "config", "tables", "groups", "sessions", "expect"}, "scenario");
  if (auto v = root["name"]) sc.name = text(v, "name");
  if (auto v = root["config"]) parse_config(v, sc.config);
  if (auto v = root["tables"]) {
    expect_seq(v, "tables");
    std::set<std::string> names;
    for (const auto& t : v) {
      sc.tables.push_back(parse_table(t));
      if (!names.insert(sc.tables.back().def.name).second) fail(t, "duplicate table " + sc.tables.back().def.name);
    }
  }
  if (auto v = root["groups"]) {
    expect_seq(v, "groups");
    for (const auto& g : v) sc.config.groups.push_back(parse_group(g));
  }
  try {
    sc.config.validate();
  } catch (const std::exception& e) {
    fail(root["config"] ? root["config"] : root, e.what());
  }
  std::set<std::string> group_names;
  for (const auto& g : sc.config.groups) group_names.insert(g.name);
  if (auto v = root["sessions"]) {
    expect_seq(v, "sessions");
    std::set<std::string> ids;
    std::set<std::uint64_t> seqs;
    for (const auto& s : v) {
      expect_map(s, "session");
      only_keys(s, {"id", "group", "steps"}, "session");
      SessionSpec spec;
      if (!s["id"]) fail(s, "a session needs an id");
      spec.id = text(s["id"], "session id");
      if (!ids.insert(spec.id).second) fail(s["id"], "duplicate session " + spec.id);
      if (auto g = s["group"]) {
        spec.group = text(g, "group");
        if (!group_names.contains(spec.group)) fail(g, "unknown group " + spec.group);
      }
      if (auto steps = s["steps"]) {
        expect_seq(steps, "steps");
        for (const auto& st : steps) {
          spec.steps.push_back(parse_step(st));
          if (!seqs.insert(spec.steps.back().seq).second) {
            fail(st["seq"], fmt::format("step number {} is used twice", spec.steps.back().seq));
          }
          if (spec.steps.size() > 1 && spec.steps.back().seq < spec.steps[spec.steps.size() - 2].seq) {
            fail(st["seq"], "step numbers of a session must increase");
          }
        }
      }
      sc.sessions.push_back(std::move(spec));
    }
  }
  if (auto v = root["expect"]) {
    sc.expect = parse_expect(v);
    std::set<std::string> ids;
    for (const auto& s : sc.sessions) ids.insert(s.id);
    for (const auto& [id, unused] : sc.expect.outcomes) {
      if (!ids.contains(id)) fail(v["outcomes"], "expected outcome for unknown session " + id);
    }
  }
  return sc;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError(0, fmt::format("cannot read {}", path));
  std::stringstream buf;
  buf << in.rdbuf();
  Scenario sc = parse_scenario(buf.str());
  if (sc.name.empty()) sc.name = path;
  return sc;
}

ScenarioResult run_scenario(const Scenario& scenario) {
  ClusterSim sim(scenario.config);
  for (const auto& t : scenario.tables) sim.create_table(t.def, t.rows);
  for (const auto& s : scenario.sessions) sim.add_session(s);
  sim.run();

  ScenarioResult r;
  r.sessions = sim.sessions();
  r.gdd_runs = sim.gdd_runs();
  r.transactions = sim.transactions();
  r.trace = sim.trace();
  r.trace_hash = sim.trace_hash();
  r.final_state = sim.dump_state();
  r.metrics = compute_metrics(sim, sim.now());
  for (const auto& t : r.transactions) r.accounting += t.accounting;
  auto label = [&sim](Dxid d) { return sim.label(d); };
  for (const auto& run : r.gdd_runs) {
    if (run.verdict.outcome == DetectionOutcome::Deadlock) r.verdict = DetectionOutcome::Deadlock;
    for (Dxid d : run.aborted) r.victims.push_back(sim.label(d));
    if (r.gdd_trace.empty()) {
      for (const auto& step : run.verdict.trace) r.gdd_trace.push_back(compact_step(step, label));
    }
  }
  if (!scenario.config.gdd_enabled) {
    const DetectionVerdict v = detect(sim.collect_wait_graph(), LiveView{});
    if (v.outcome == DetectionOutcome::Deadlock) r.verdict = DetectionOutcome::Deadlock;
  }

  const ScenarioExpect& e = scenario.expect;
  if (e.verdict && *e.verdict != r.verdict) {
    r.failures.push_back(fmt::format("verdict: expected {}, got {}", to_string(*e.verdict), to_string(r.verdict)));
  }
  if (e.victims && *e.victims != r.victims) {
    r.failures.push_back(
        fmt::format("victims: expected [{}], got [{}]", fmt::join(*e.victims, ","), fmt::join(r.victims, ",")));
  }
  for (const auto& [id, want] : e.outcomes) {
    for (const auto& s : r.sessions) {
      if (s.id != id) continue;
      const std::string got = s.last_outcome ? std::string(to_string(*s.last_outcome)) : "none";
      if (!s.last_outcome || *s.last_outcome != want) {
        r.failures.push_back(fmt::format("session {}: expected {}, got {}", id, to_string(want), got));
      }
    }
  }
  if (e.gdd_trace && *e.gdd_trace != r.gdd_trace) {
    r.failures.push_back(fmt::format("gdd trace: expected [{}], got [{}]", fmt::join(*e.gdd_trace, ", "),
                                     fmt::join(r.gdd_trace, ", ")));
  }
  return r;
}

}  // namespace htapsim
