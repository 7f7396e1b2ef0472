#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "htapsim/cluster_sim.hpp"
#include "htapsim/gdd.hpp"
#include "htapsim/interconnect.hpp"
#include "htapsim/scenario.hpp"
#include "htapsim/wait_graph.hpp"
#include "htapsim/workload.hpp"

namespace {

using namespace htapsim;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitFound = 2;

bool write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
  if (!out) {
    std::cerr << "cannot write " << path << '\n';
    return false;
  }
  return true;
}

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += l + '\n';
  return out;
}

void print_metrics(std::string_view title, const RunMetrics& m) {
  fmt::print("{}: committed={} aborted={} tps={:.2f} p50={} p95={} p99={} max_inflight_updates={}\n", title,
             m.committed, m.aborted, m.tps, m.p50, m.p95, m.p99, m.max_inflight_updates);
  fmt::print("{}: prepare={} commit={} fsyncs={} 1pc={} 2pc={} ro={}\n", title,
             m.accounting.message(MessageType::Prepare), m.accounting.message(MessageType::Commit),
             m.accounting.total_fsyncs(), m.protocols.contains(CommitProtocol::OnePhase) ? m.protocols.at(CommitProtocol::OnePhase) : 0,
             m.protocols.contains(CommitProtocol::TwoPhase) ? m.protocols.at(CommitProtocol::TwoPhase) : 0,
             m.protocols.contains(CommitProtocol::ReadOnly) ? m.protocols.at(CommitProtocol::ReadOnly) : 0);
}

int cmd_run(const std::string& file, std::optional<std::uint64_t> seed, const std::string& out,
            const std::string& trace) {
  Scenario sc;
  try {
    sc = load_scenario(file);
  } catch (const ScenarioError& e) {
    std::cerr << file << ": " << e.what() << '\n';
    return kExitError;
  }
  if (seed) sc.config.seed = *seed;
  const ScenarioResult r = run_scenario(sc);
  for (const auto& s : r.sessions) {
    fmt::print("session {}: {}\n", s.id, s.last_outcome ? to_string(*s.last_outcome) : "idle");
  }
  fmt::print("verdict: {}\n", to_string(r.verdict));
  if (!r.victims.empty()) fmt::print("victims: {}\n", fmt::join(r.victims, ","));
  if (!r.gdd_trace.empty()) fmt::print("gdd trace: {}\n", fmt::join(r.gdd_trace, ", "));
  if (!out.empty() && !write_file(out, transactions_csv(r.transactions))) return kExitError;
  if (!trace.empty() && !write_file(trace, join_lines(r.trace))) return kExitError;
  for (const auto& f : r.failures) fmt::print("FAILED {}\n", f);
  if (!sc.expect.empty() && r.ok()) fmt::print("expectations met\n");
  return r.ok() ? kExitOk : kExitError;
}

int cmd_bench(BenchOptions o, const std::string& workload, const std::string& layout, const std::string& out) {
  const auto w = parse_workload(workload);
  if (!w) {
    std::cerr << "unknown workload " << workload << '\n';
    return kExitError;
  }
  o.workload = *w;
  const auto l = parse_htap_layout(layout);
  if (!l) {
    std::cerr << "unknown layout " << layout << " (I, II or III)\n";
    return kExitError;
  }
  o.htap_layout = *l;
  BenchResult r;
  try {
    r = run_bench(o);
  } catch (const std::invalid_argument& e) {
    std::cerr << e.what() << '\n';
    return kExitError;
  }
  const std::string csv = transactions_csv(r.transactions);
  if (!out.empty()) {
    if (!write_file(out, csv)) return kExitError;
  }
  print_metrics(to_string(o.workload), r.metrics);
  if (r.oltp) print_metrics("oltp", *r.oltp);
  if (r.olap) print_metrics("olap", *r.olap);
  return kExitOk;
}

int cmd_detect(const std::string& file, bool trace) {
  std::ifstream in(file);
  if (!in) {
    std::cerr << "cannot read " << file << '\n';
    return kExitError;
  }
  std::stringstream buf;
  buf << in.rdbuf();
  GlobalWaitForGraph g;
  try {
    g = parse_graph_document(buf.str());
  } catch (const GraphFormatError& e) {
    std::cerr << file << ": " << e.what() << '\n';
    return kExitError;
  }
  const DetectionVerdict v = detect(g, LiveView{});
  if (trace) {
    for (const auto& step : v.trace) fmt::print("{}\n", describe_step(step));
  }
  if (v.outcome != DetectionOutcome::Deadlock) {
    fmt::print("CLEAN\n");
    return kExitOk;
  }
  std::vector<std::string> ids;
  for (std::size_t i = 0; i + 1 < v.cycle.size(); ++i) ids.push_back(to_string(v.cycle[i]));
  fmt::print("DEADLOCK {}\n", fmt::join(ids, " "));
  return kExitFound;
}

int cmd_netdeadlock(int segments, int buffer, const std::string& prefetch) {
  if (prefetch != "on" && prefetch != "off") {
    std::cerr << "--prefetch takes on or off\n";
    return kExitError;
  }
  JoinRun r;
  try {
    r = run_join_scenario(segments, buffer, prefetch == "on");
  } catch (const std::invalid_argument& e) {
    std::cerr << e.what() << '\n';
    return kExitError;
  }
  if (r.completed) {
    fmt::print("COMPLETED {} pairs\n", r.joined_pairs);
    return kExitOk;
  }
  fmt::print("STALLED {}\n", describe_cycle(r.cycle));
  return kExitFound;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulated MPP cluster with global deadlock detection"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run a scenario file and check its expectations");
  std::string scenario_file;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string trace_file;
  run->add_option("scenario", scenario_file, "Scenario file")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Override the scenario seed");
  run->add_option("--out", out, "Write per-transaction metrics CSV");
  run->add_option("--trace", trace_file, "Write the event trace");

  auto* bench = app.add_subcommand("bench", "Run a closed-loop benchmark workload");
  BenchOptions opts;
  std::string workload;
  std::string layout = "I";
  std::string bench_out;
  bench->add_option("--workload", workload, "update-only, insert-only, tpcb-like or mixed-htap")->required();
  bench->add_option("--clients", opts.clients, "Clients (OLTP clients for mixed-htap)")->check(CLI::PositiveNumber);
  bench->add_option("--ticks", opts.ticks, "Duration in ticks")->check(CLI::PositiveNumber);
  bench->add_flag("--legacy-locking", opts.legacy_locking, "Exclusive table locks for update and delete");
  bench->add_option("--gdd-period", opts.gdd_period, "Detector period in ticks")->check(CLI::PositiveNumber);
  bench->add_flag("--no-1pc", [&opts](std::int64_t) { opts.one_phase_commit = false; }, "Always use two-phase commit");
  bench->add_option("--seed", opts.seed, "Random seed");
  bench->add_option("--segments", opts.segments, "Segment count")->check(CLI::PositiveNumber);
  bench->add_option("--rows", opts.rows, "Preloaded rows")->check(CLI::PositiveNumber);
  bench->add_option("--layout", layout, "mixed-htap resource group layout: I, II or III");
  bench->add_option("--olap-clients", opts.olap_clients, "mixed-htap OLAP clients");
  bench->add_option("--out", bench_out, "Write per-transaction metrics CSV");

  auto* det = app.add_subcommand("detect", "Run the deadlock detector on a wait-for graph file");
  std::string graph_file;
  bool det_trace = false;
  det->add_option("--graph", graph_file, "Graph document")->required();
  det->add_flag("--trace", det_trace, "Print every removal step");

  auto* net = app.add_subcommand("netdeadlock", "Run the redistribute hash join dataflow");
  int segments = 3;
  int buffer = 2;
  std::string prefetch = "off";
  net->add_option("--segments", segments, "Segment count")->check(CLI::PositiveNumber);
  net->add_option("--buffer", buffer, "Channel capacity in tuples")->check(CLI::PositiveNumber);
  net->add_option("--prefetch", prefetch, "on or off");

  CLI11_PARSE(app, argc, argv);

  if (*run) return cmd_run(scenario_file, seed, out, trace_file);
  if (*bench) return cmd_bench(opts, workload, layout, bench_out);
  if (*det) return cmd_detect(graph_file, det_trace);
  return cmd_netdeadlock(segments, buffer, prefetch);
}
