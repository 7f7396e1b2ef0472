#pragma once

// Deterministic discrete-event simulation of a coordinator and N segments.
//
// Events are closures ordered by (tick, sequence number). Work events are
// statement and protocol steps; daemon events are detector runs. A detector
// run executes inside one event, so no site makes progress while it inspects
// the lock tables (the global pause).
//
// Scripted sessions issue their steps in global sequence order: whenever no
// work event is pending, the idle session whose next step has the lowest
// sequence number issues it. Free-running sessions (benchmarks) issue their
// next step as soon as the previous one completes.

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "htapsim/dtm.hpp"
#include "htapsim/gdd.hpp"
#include "htapsim/lock_manager.hpp"
#include "htapsim/resource_group.hpp"
#include "htapsim/rng.hpp"
#include "htapsim/segment_store.hpp"
#include "htapsim/statement.hpp"
#include "htapsim/types.hpp"
#include "htapsim/wait_graph.hpp"

namespace htapsim {

struct SimConfig {
  int segments = 3;
  std::uint64_t seed = 1;
  bool gdd_enabled = true;
  GddConfig gdd;
  bool legacy_locking = false;
  bool one_phase_commit = true;
  /// Delay of every message unless its link has its own.
  Tick message_delay = 1;
  /// (from, to) site numbers, -1 for the coordinator.
  std::map<std::pair<int, int>, Tick> link_delay;
  /// Each message gets an extra delay drawn from [0, jitter]; links stay FIFO.
  Tick delay_jitter = 0;
  /// Ticks a segment spends on one statement execution step.
  Tick exec_cost = 1;
  Tick fsync_cost = 1;
  /// Cores for resource-group CPU scheduling; with 0, CPU work of w ticks on
  /// p processes takes ceil(w / p) ticks.
  int cores = 0;
  std::uint64_t global_memory = 0;
  std::vector<ResourceGroupConfig> groups;
  /// Segments that vote no when asked to prepare.
  std::set<SegmentId> failing_prepare;
  Tick max_ticks = 10'000'000;
  bool record_trace = true;

  /// Throws std::invalid_argument for an inconsistent configuration.
  void validate() const;
};

struct SessionStep {
  std::uint64_t seq = 0;
  Statement statement;
  /// Memory the statement charges to its query, in bytes.
  std::optional<std::int64_t> mem;
  /// CPU work per process, in core-ticks.
  std::uint64_t cpu = 0;
  unsigned cpu_processes = 1;
  /// The step is not issued before this tick.
  std::optional<Tick> not_before;
};

struct SessionSpec {
  std::string id;
  std::string group;  // empty: no resource group
  std::vector<SessionStep> steps;
  /// Free-running sessions: the steps of the next transaction, or nullopt to
  /// stop. Called whenever `steps` is used up.
  std::function<std::optional<std::vector<SessionStep>>()> next_transaction;
};

enum class TxnOutcome : std::uint8_t { Committed, Aborted, Open };

std::string_view to_string(TxnOutcome o) noexcept;

struct TxnRecord {
  Dxid dxid{};
  std::string session;
  std::string group;
  TxnOutcome outcome = TxnOutcome::Open;
  std::string reason;
  bool victim = false;
  CommitProtocol protocol = CommitProtocol::ReadOnly;
  CommitAccounting accounting;
  std::set<SegmentId> write_segments;
  Tick begin_tick = 0;
  Tick end_tick = 0;

  Tick latency() const noexcept { return end_tick - begin_tick; }
};

struct GddRun {
  Tick tick = 0;
  DetectionVerdict verdict;
  std::vector<Dxid> aborted;
};

/// How a running transaction reads on one segment.
struct SiteReadView {
  LocalXid xid{};
  CommandId command{};
  LocalSnapshot local_snapshot;
};

struct StepOutput {
  std::uint64_t seq = 0;
  std::size_t count = 0;
  std::vector<Row> rows;  // select results, sorted
};

struct SessionReport {
  std::string id;
  /// Statements that completed, by step sequence number.
  std::vector<StepOutput> results;
  std::vector<TxnRecord> transactions;
  /// Outcome of the last transaction; Open when it never finished.
  std::optional<TxnOutcome> last_outcome;
  bool blocked = false;
  std::size_t steps_left = 0;
};

class ClusterSim final : private ClusterControl {
 public:
  explicit ClusterSim(SimConfig config);
  ClusterSim(const ClusterSim&) = delete;
  ClusterSim& operator=(const ClusterSim&) = delete;
  ~ClusterSim() override;

  const SimConfig& config() const noexcept { return config_; }

  /// Creates the table on every segment and loads `rows` as committed data.
  void create_table(const TableDef& def, const std::vector<Row>& rows = {});
  std::size_t add_session(SessionSpec spec);

  /// Runs until no event is left or the next one lies past `until`.
  void run(Tick until = std::numeric_limits<Tick>::max());
  /// Called each time the cluster becomes quiescent, before any further
  /// scripted step is issued.
  void on_quiescent(std::function<void(ClusterSim&)> hook) { quiescent_hook_ = std::move(hook); }
  /// Called with every trace line as it is produced, whether or not the
  /// trace is recorded.
  void on_log(std::function<void(ClusterSim&, const std::string&)> hook) { log_hook_ = std::move(hook); }
  /// Runs `fn` as a work event at tick `at`.
  void schedule(Tick at, std::function<void(ClusterSim&)> fn);

  Tick now() const noexcept { return now_; }
  const std::vector<std::string>& trace() const noexcept { return trace_; }
  std::uint64_t trace_hash() const;
  const std::vector<TxnRecord>& transactions() const noexcept { return records_; }
  const std::vector<GddRun>& gdd_runs() const noexcept { return gdd_runs_; }
  std::vector<SessionReport> sessions() const;
  /// Session id of the transaction's session, or its dxid.
  std::string label(Dxid d) const;

  /// The wait-for graph formed by every site's lock table right now.
  GlobalWaitForGraph collect_wait_graph() const;
  /// Sessions whose current statement waits for a lock (or admission).
  std::vector<std::string> blocked_sessions() const;
  /// True when no work event is pending.
  bool quiescent() const noexcept { return pending_work_ == 0; }

  const TransactionManager& transaction_manager() const noexcept { return tm_; }
  TransactionManager& transaction_manager() noexcept { return tm_; }
  const SegmentStore& store(SegmentId s) const;
  const SegmentXidMap& xid_map(SegmentId s) const;
  const LockTable& lock_table(SegmentId s) const;
  /// Nullopt until the transaction has reached the segment, and after it ends.
  std::optional<SiteReadView> read_view(Dxid txn, SegmentId s) const;
  const ResourceManager* resources() const noexcept { return resources_.get(); }
  const CpuScheduler* scheduler() const noexcept { return cpu_.get(); }

  /// Committed rows of every table on every segment, one line per row.
  std::string dump_state() const;

  /// Largest number of transactions that held an update-mode relation lock on
  /// the coordinator at the same time.
  std::size_t max_inflight_updates() const noexcept { return max_inflight_updates_; }

  bool is_running(Dxid txn) const override;
  void abort_transaction(Dxid txn, std::string_view reason) override;

 private:
  struct Impl;
  struct Event {
    Tick tick = 0;
    std::uint64_t seq = 0;
    bool daemon = false;
    std::function<void()> fn;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.tick != b.tick ? a.tick > b.tick : a.seq > b.seq;
    }
  };

  void push(Tick at, bool daemon, std::function<void()> fn);
  void log(std::string_view site, std::string_view event, const std::string& details);

  SimConfig config_;
  Tick now_ = 0;
  std::uint64_t next_seq_ = 0;
  std::uint64_t pending_work_ = 0;
  std::priority_queue<Event, std::vector<Event>, Later> events_;
  std::vector<std::string> trace_;
  std::vector<TxnRecord> records_;
  std::vector<GddRun> gdd_runs_;
  TransactionManager tm_;
  std::unique_ptr<ResourceManager> resources_;
  std::unique_ptr<CpuScheduler> cpu_;
  std::size_t max_inflight_updates_ = 0;
  std::function<void(ClusterSim&)> quiescent_hook_;
  std::function<void(ClusterSim&, const std::string&)> log_hook_;
  std::unique_ptr<Impl> impl_;
};

/// Summary statistics of a run.
struct RunMetrics {
  Tick ticks = 0;
  std::uint64_t committed = 0;
  std::uint64_t aborted = 0;
  double tps = 0;  // commits per 1000 ticks
  Tick p50 = 0;
  Tick p95 = 0;
  Tick p99 = 0;
  std::size_t max_inflight_updates = 0;
  CommitAccounting accounting;
  std::map<CommitProtocol, std::uint64_t> protocols;
};

/// Nearest-rank percentile of `values` (0 when empty).
Tick percentile(std::vector<Tick> values, double p);

/// Metrics over transactions that began at or before `ticks`; with a group,
/// only that group's transactions.
RunMetrics compute_metrics(const ClusterSim& sim, Tick ticks, std::string_view group = {});

/// `dxid,protocol,msg_prepare,msg_commit,fsyncs,latency_ticks` rows for the
/// committed transactions.
std::string transactions_csv(const std::vector<TxnRecord>& records);

}  // namespace htapsim
