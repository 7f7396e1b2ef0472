#include "htapsim/cluster_sim.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

namespace htapsim {

std::string_view to_string(TxnOutcome o) noexcept {
  switch (o) {
    case TxnOutcome::Committed: return "committed";
    case TxnOutcome::Aborted: return "aborted";
    case TxnOutcome::Open: return "open";
  }
  return "?";
}

void SimConfig::validate() const {
  if (segments < 1) throw std::invalid_argument("a cluster needs at least one segment");
  gdd.validate();
  for (const auto& [link, delay] : link_delay) {
    for (int site : {link.first, link.second}) {
      if (site < -1 || site >= segments) throw std::invalid_argument(fmt::format("link endpoint {} does not exist", site));
    }
    (void)delay;
  }
  for (SegmentId s : failing_prepare) {
    if (to_underlying(s) < 0 || to_underlying(s) >= segments) {
      throw std::invalid_argument(fmt::format("failing prepare segment {} does not exist", to_string(s)));
    }
  }
  if (cores < 0) throw std::invalid_argument("cores must not be negative");
  if (!groups.empty()) validate_groups(groups, cores);
  if (cores == 0) {
    for (const auto& g : groups) {
      if (g.cpuset) throw std::invalid_argument(fmt::format("group {} has a cpuset but the cluster has no cores", g.name));
    }
  }
}

namespace {

bool takes_update_lock(const Statement& st) {
  return st.kind == StatementKind::Update || st.kind == StatementKind::Delete;
}

struct StepResult {
  std::size_t count = 0;
  std::vector<Row> rows;
};

}  // namespace

struct ClusterSim::Impl {
  struct Site {
    SegmentId id;
    LockTable locks;
    SegmentXidMap xids;
    std::optional<SegmentStore> store;
  };

  struct SiteTxn {
    LocalXid xid{};
    LocalSnapshot local_snapshot;
    std::unique_ptr<SegmentExecution> exec;
    bool blocked = false;
    bool wrote = false;
    bool finished = false;
    std::optional<LockTag> waiting_on;
  };

  struct Txn {
    Dxid dxid{};
    std::size_t session = 0;
    std::map<SegmentId, SiteTxn> sites;
    std::uint32_t command = 0;
    std::optional<Statement> statement;
    std::map<SegmentId, std::vector<Row>> routed_rows;
    std::set<SegmentId> awaiting;
    StepResult result;
    std::optional<JobId> cpu_job;
    std::optional<CommitProtocolRun> commit;
    bool update_lock = false;
    bool admitted = true;
    TxnRecord record;
  };

  struct Session {
    SessionSpec spec;
    std::size_t next = 0;
    bool busy = false;
    bool done = false;
    std::optional<Dxid> txn;
    std::vector<std::size_t> records;
    std::uint64_t token = 0;  // bumped whenever the current step ends
  };

  ClusterSim& sim;
  std::vector<Site> sites;
  std::map<Dxid, Txn> txns;
  std::vector<Session> sessions;
  std::map<Dxid, std::string> labels;
  std::map<std::pair<int, int>, Tick> link_clock;
  std::map<JobId, Dxid> jobs;
  JobId next_job = 1;
  bool cpu_tick_pending = false;
  bool daemon_armed = false;
  std::uint64_t work_done = 0;
  std::uint64_t work_at_last_gdd = 0;
  int idle_gdd_runs = 0;
  std::size_t inflight_updates = 0;
  Rng rng;

  explicit Impl(ClusterSim& s) : sim(s), rng(s.config_.seed) {
    sites.push_back(Site{kCoordinator, LockTable(kCoordinator), SegmentXidMap(kCoordinator, 1), std::nullopt});
    for (int i = 0; i < s.config_.segments; ++i) {
      const SegmentId id = segment_id(i);
      // Offset counters so local xids of different sites never coincide.
      sites.push_back(Site{id, LockTable(id), SegmentXidMap(id, 1000U * static_cast<std::uint64_t>(i + 1) + 1),
                           SegmentStore(id)});
    }
  }

  Site& site(SegmentId s) { return sites.at(static_cast<std::size_t>(to_underlying(s) + 1)); }
  const Site& site(SegmentId s) const { return sites.at(static_cast<std::size_t>(to_underlying(s) + 1)); }
  Txn* find(Dxid d) {
    auto it = txns.find(d);
    return it == txns.end() ? nullptr : &it->second;
  }
  Session& session_of(const Txn& t) { return sessions[t.session]; }
  bool scripted(const Session& s) const { return !s.spec.next_transaction; }
  const SessionStep& current_step(const Session& s) const { return s.spec.steps.at(s.next); }

  std::string name(Dxid d) const {
    auto it = labels.find(d);
    return it == labels.end() ? to_string(d) : it->second;
  }

  void log(SegmentId at, std::string_view event, const std::string& details) {
    sim.log(to_string(at), event, details);
  }

  // --- network -----------------------------------------------------------

  Tick delay(SegmentId from, SegmentId to) {
    const auto key = std::pair{to_underlying(from), to_underlying(to)};
    auto it = sim.config_.link_delay.find(key);
    Tick d = it == sim.config_.link_delay.end() ? sim.config_.message_delay : it->second;
    if (sim.config_.delay_jitter > 0) d += rng.below(sim.config_.delay_jitter + 1);
    return d;
  }

  void send(SegmentId from, SegmentId to, Tick after, std::function<void()> fn) {
    const auto key = std::pair{to_underlying(from), to_underlying(to)};
    Tick at = sim.now_ + after + delay(from, to);
    Tick& last = link_clock[key];
    at = std::max(at, last);
    last = at;
    sim.push(at, false, std::move(fn));
  }

  // --- sessions ----------------------------------------------------------

  // Makes sure the session has a next step, refilling free-running sessions.
  bool has_step(Session& s) {
    if (s.done) return false;
    if (s.next < s.spec.steps.size()) return true;
    if (s.spec.next_transaction) {
      if (auto more = s.spec.next_transaction(); more && !more->empty()) {
        s.spec.steps = std::move(*more);
        s.next = 0;
        return true;
      }
    }
    s.done = !s.txn;
    return false;
  }

  void complete_step(std::size_t si) {
    Session& s = sessions[si];
    s.busy = false;
    ++s.next;
    ++s.token;
    schedule_free_running(si);
  }

  void schedule_free_running(std::size_t si) {
    Session& s = sessions[si];
    if (scripted(s) || !has_step(s)) return;
    const std::uint64_t token = s.token;
    const Tick at = std::max(sim.now_, current_step(s).not_before.value_or(0));
    sim.push(at, false, [this, si, token] {
      if (sessions[si].token == token && !sessions[si].busy) issue(si);
    });
  }

  // After an abort the session skips to just past its next commit or abort.
  void skip_transaction(std::size_t si) {
    Session& s = sessions[si];
    s.busy = false;
    ++s.token;
    while (s.next < s.spec.steps.size()) {
      const StatementKind k = s.spec.steps[s.next].statement.kind;
      ++s.next;
      if (k == StatementKind::Commit || k == StatementKind::Abort) break;
    }
    schedule_free_running(si);
  }

  // At quiescence: the idle scripted session with the lowest next sequence
  // number issues its step. False when none can.
  bool issue_scripted() {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < sessions.size(); ++i) {
      Session& s = sessions[i];
      if (!scripted(s) || s.busy || !has_step(s)) continue;
      if (!best || current_step(s).seq < current_step(sessions[*best]).seq) best = i;
    }
    if (!best) return false;
    const SessionStep& step = current_step(sessions[*best]);
    if (step.not_before && *step.not_before > sim.now_) {
      const std::size_t si = *best;
      const std::uint64_t token = sessions[si].token;
      sim.push(*step.not_before, false, [this, si, token] {
        if (sessions[si].token == token && !sessions[si].busy) issue(si);
      });
      return true;
    }
    issue(*best);
    return true;
  }

  void issue(std::size_t si) {
    Session& s = sessions[si];
    if (!has_step(s)) return;
    const SessionStep& step = current_step(s);
    s.busy = true;
    sim.log("coordinator", "issue", fmt::format("{} #{} {}", s.spec.id, step.seq, step.statement.text));
    switch (step.statement.kind) {
      case StatementKind::Begin:
        if (!s.txn) {
          begin(si);
          if (!find(*s.txn)->admitted) return;
        }
        complete_step(si);
        return;
      case StatementKind::Commit:
        if (!s.txn) {
          complete_step(si);
          return;
        }
        start_commit(*s.txn);
        return;
      case StatementKind::Abort:
        if (s.txn) abort(*s.txn, "rollback", false, true);
        else complete_step(si);
        return;
      default:
        if (!s.txn) begin(si);
        if (!find(*s.txn)->admitted) return;
        start_statement(*s.txn);
        return;
    }
  }

  void begin(std::size_t si) {
    Session& s = sessions[si];
    const TransactionDescriptor& desc = sim.tm_.begin(sim.now_);
    const Dxid d = desc.dxid;
    s.txn = d;
    labels[d] = scripted(s) ? s.spec.id : to_string(d);
    Txn& t = txns[d];
    t.dxid = d;
    t.session = si;
    t.record.dxid = d;
    t.record.session = s.spec.id;
    t.record.group = s.spec.group;
    t.record.begin_tick = sim.now_;
    first_contact(t, kCoordinator);
    log(kCoordinator, "begin", fmt::format("{} dxid={}", name(d), to_string(d)));
    if (sim.resources_ && !s.spec.group.empty()) {
      if (sim.resources_->admit(to_underlying(d), s.spec.group) == Admission::Queue) {
        t.admitted = false;
        log(kCoordinator, "queued", fmt::format("{} group={}", name(d), s.spec.group));
      }
    }
  }

  void admitted(Dxid d) {
    Txn* t = find(d);
    if (t == nullptr) return;
    t->admitted = true;
    log(kCoordinator, "admitted", name(d));
    Session& s = session_of(*t);
    if (current_step(s).statement.kind == StatementKind::Begin) complete_step(t->session);
    else start_statement(d);
  }

  void on_finished_queries(const std::vector<QueryId>& next) {
    for (QueryId q : next) {
      const Dxid d{q};
      sim.push(sim.now_, false, [this, d] { admitted(d); });
    }
  }

  // --- statements --------------------------------------------------------

  void first_contact(Txn& t, SegmentId seg) {
    Site& st = site(seg);
    SiteTxn& local = t.sites[seg];
    local.xid = st.xids.assign(t.dxid);
    st.locks.register_txn(t.dxid, local.xid);
    local.local_snapshot = st.xids.take_snapshot();
    sim.tm_.descriptor(t.dxid).local_xids[seg] = local.xid;
  }

  void start_statement(Dxid d) {
    Txn& t = *find(d);
    Session& s = session_of(t);
    const SessionStep& step = current_step(s);
    const Statement& st = step.statement;
    const SegmentStore& store0 = *site(segment_id(0)).store;
    if (!store0.has_table(st.table)) {
      fail(d, fmt::format("relation \"{}\" does not exist", st.table));
      return;
    }
    try {
      check_statement(st, store0.table(st.table));
    } catch (const StatementError& e) {
      fail(d, e.what());
      return;
    }
    if (step.mem && sim.resources_ && !s.spec.group.empty()) {
      if (sim.resources_->charge_memory(to_underlying(d), *step.mem) == MemoryOutcome::Cancelled) {
        fail(d, "out of memory: query cancelled by resource group");
        return;
      }
    }
    ++t.command;
    t.statement = st;
    t.result = StepResult{};
    t.routed_rows.clear();
    if (step.cpu == 0) {
      lock_on_coordinator(d);
      return;
    }
    const unsigned procs = std::max(1U, step.cpu_processes);
    if (sim.cpu_ && !s.spec.group.empty()) {
      const JobId job = next_job++;
      sim.cpu_->submit(job, sim.resources_->group_index(s.spec.group), step.cpu, procs);
      jobs[job] = d;
      t.cpu_job = job;
      arm_cpu_tick();
      return;
    }
    const Tick busy = (step.cpu + procs - 1) / procs;
    sim.push(sim.now_ + busy, false, [this, d] {
      if (find(d) != nullptr) lock_on_coordinator(d);
    });
  }

  void arm_cpu_tick() {
    if (cpu_tick_pending) return;
    cpu_tick_pending = true;
    sim.push(sim.now_ + 1, false, [this] { cpu_tick(); });
  }

  void cpu_tick() {
    cpu_tick_pending = false;
    const CpuTick tick = sim.cpu_->schedule_tick();
    for (JobId job : tick.completed) {
      auto it = jobs.find(job);
      if (it == jobs.end()) continue;
      const Dxid d = it->second;
      jobs.erase(it);
      if (Txn* t = find(d); t != nullptr) {
        t->cpu_job.reset();
        lock_on_coordinator(d);
      }
    }
    if (!sim.cpu_->idle()) arm_cpu_tick();
  }

  void fail(Dxid d, const std::string& error) {
    log(kCoordinator, "error", fmt::format("{}: {}", name(d), error));
    abort(d, error, false, false);
  }

  ExecContext context(Txn& t, SegmentId seg) {
    Site& st = site(seg);
    SiteTxn& local = t.sites.at(seg);
    return ExecContext{t.dxid,
                       local.xid,
                       CommandId{t.command},
                       &sim.tm_.snapshot_of(t.dxid),
                       &local.local_snapshot,
                       &st.locks,
                       st.store ? &*st.store : nullptr,
                       &st.xids,
                       sim.config_.legacy_locking,
                       sim.now_};
  }

  void lock_on_coordinator(Dxid d) {
    Txn& t = *find(d);
    t.sites.at(kCoordinator).exec = std::make_unique<SegmentExecution>(*t.statement, std::vector<Row>{}, true);
    run_site(d, kCoordinator);
  }

  // Runs (or resumes) the transaction's execution on one site.
  void run_site(Dxid d, SegmentId seg) {
    Txn* t = find(d);
    if (t == nullptr) return;
    SiteTxn& local = t->sites.at(seg);
    const ExecResult r = local.exec->run(context(*t, seg));
    wake(seg, r.promoted);
    if (r.status == ExecStatus::Blocked) {
      local.blocked = true;
      local.waiting_on = r.waiting_on;
      log(seg, "wait", fmt::format("{} on {}", name(d), r.waiting_on ? r.waiting_on->describe() : "?"));
      return;
    }
    local.waiting_on.reset();
    if (seg == kCoordinator) {
      local.exec.reset();
      if (takes_update_lock(*t->statement) && !t->update_lock) {
        t->update_lock = true;
        ++inflight_updates;
        sim.max_inflight_updates_ = std::max(sim.max_inflight_updates_, inflight_updates);
      }
      dispatch(d);
      return;
    }
    const bool ok = r.status == ExecStatus::Done;
    if (local.exec->wrote()) {
      local.wrote = true;
      sim.tm_.descriptor(d).write_segments.insert(seg);
    }
    local.exec.reset();
    log(seg, ok ? "exec" : "error",
        ok ? fmt::format("{} {} rows", name(d), r.count) : fmt::format("{}: {}", name(d), r.error));
    send(seg, kCoordinator, sim.config_.exec_cost,
         [this, d, seg, ok, count = r.count, rows = r.rows, error = r.error] {
           statement_reply(d, seg, ok, count, rows, error);
         });
  }

  void wake(SegmentId seg, const std::vector<LockRequest>& promoted) {
    for (const LockRequest& req : promoted) {
      const Dxid d = req.txn;
      sim.push(sim.now_, false, [this, d, seg] { resume(d, seg); });
    }
  }

  void resume(Dxid d, SegmentId seg) {
    Txn* t = find(d);
    if (t == nullptr) return;
    auto it = t->sites.find(seg);
    if (it == t->sites.end() || !it->second.blocked) return;
    it->second.blocked = false;
    log(seg, "grant", name(d));
    run_site(d, seg);
  }

  void dispatch(Dxid d) {
    Txn& t = *find(d);
    const Statement& st = *t.statement;
    const TableDef& def = site(segment_id(0)).store->table(st.table);
    const int n = sim.config_.segments;
    std::set<SegmentId> targets;
    if (st.kind == StatementKind::Insert) {
      for (const auto& values : st.rows) {
        if (values.size() != 2) {
          fail(d, "insert rows need two values");
          return;
        }
        const Row row{values[0], values[1]};
        const SegmentId seg = route(row[def.key_index()], n);
        t.routed_rows[seg].push_back(row);
        targets.insert(seg);
      }
    } else if (st.kind == StatementKind::Lock) {
      for (int i = 0; i < n; ++i) targets.insert(segment_id(i));
    } else if (auto keys = pinned_keys(st.where, def)) {
      for (std::int64_t k : *keys) targets.insert(route(k, n));
    } else {
      for (int i = 0; i < n; ++i) targets.insert(segment_id(i));
    }
    t.awaiting = targets;
    if (targets.empty()) {
      statement_done(d);
      return;
    }
    for (SegmentId seg : targets) {
      send(kCoordinator, seg, 0, [this, d, seg] { segment_receive(d, seg); });
    }
  }

  void segment_receive(Dxid d, SegmentId seg) {
    Txn* t = find(d);
    if (t == nullptr || !t->statement) return;
    if (!t->sites.contains(seg)) first_contact(*t, seg);
    std::vector<Row> rows;
    if (auto it = t->routed_rows.find(seg); it != t->routed_rows.end()) rows = it->second;
    t->sites.at(seg).exec = std::make_unique<SegmentExecution>(*t->statement, std::move(rows), false);
    run_site(d, seg);
  }

  void statement_reply(Dxid d, SegmentId seg, bool ok, std::size_t count, const std::vector<Row>& rows,
                       const std::string& error) {
    Txn* t = find(d);
    if (t == nullptr || !t->awaiting.contains(seg)) return;
    if (!ok) {
      fail(d, error);
      return;
    }
    t->awaiting.erase(seg);
    t->result.count += count;
    t->result.rows.insert(t->result.rows.end(), rows.begin(), rows.end());
    if (t->awaiting.empty()) statement_done(d);
  }

  void statement_done(Dxid d) {
    Txn& t = *find(d);
    std::sort(t.result.rows.begin(), t.result.rows.end());
    Session& s = session_of(t);
    results[{t.session, current_step(s).seq}] = t.result;
    log(kCoordinator, "done", fmt::format("{} {} rows", name(d), t.result.count));
    t.statement.reset();
    complete_step(t.session);
  }

  // --- commit and abort --------------------------------------------------

  void start_commit(Dxid d) {
    Txn& t = *find(d);
    std::set<SegmentId> writes;
    for (const auto& [seg, local] : t.sites) {
      if (seg != kCoordinator && local.wrote) writes.insert(seg);
    }
    t.record.write_segments = writes;
    t.commit.emplace(d, writes, sim.config_.one_phase_commit);
    const std::vector<ProtocolMessage> out = t.commit->start();
    log(kCoordinator, "commit", fmt::format("{} {} writes={}", name(d), to_string(t.commit->protocol()), writes.size()));
    if (t.commit->protocol() == CommitProtocol::ReadOnly) {
      finish_commit(d);
      return;
    }
    sim.tm_.set_state(d, t.commit->protocol() == CommitProtocol::TwoPhase ? TxnState::Preparing : TxnState::Committing);
    for (const ProtocolMessage& m : out) {
      send(kCoordinator, m.to, 0, [this, d, m] { segment_protocol(d, m); });
    }
  }

  void segment_protocol(Dxid d, const ProtocolMessage& m) {
    Txn* t = find(d);
    if (t == nullptr || !t->commit) return;
    const SegmentId seg = m.to;
    const bool vote = !(m.type == MessageType::Prepare && sim.config_.failing_prepare.contains(seg));
    const std::optional<ProtocolMessage> reply = t->commit->on_segment_message(m, vote);
    Tick cost = 0;
    switch (m.type) {
      case MessageType::Prepare:
        log(seg, "prepare", fmt::format("{} {}", name(d), vote ? "ok" : "failed"));
        if (vote) cost = sim.config_.fsync_cost;
        else local_abort(*t, seg);
        break;
      case MessageType::Commit:
        local_commit(*t, seg);
        cost = sim.config_.fsync_cost;
        break;
      case MessageType::Abort:
        local_abort(*t, seg);
        break;
      default:
        throw ProtocolError(fmt::format("segment got {}", to_string(m.type)));
    }
    if (reply) {
      const ProtocolMessage r = *reply;
      send(seg, kCoordinator, cost, [this, d, r] { coordinator_protocol(d, r); });
    }
  }

  void coordinator_protocol(Dxid d, const ProtocolMessage& m) {
    Txn* t = find(d);
    if (t == nullptr || !t->commit) return;
    const bool was_decided = t->commit->decided();
    const std::vector<ProtocolMessage> out = t->commit->on_coordinator_message(m);
    if (t->commit->aborted()) {
      abort(d, fmt::format("prepare failed on {}", to_string(m.from)), false, false);
      return;
    }
    Tick cost = 0;
    if (!was_decided && t->commit->decided() && t->commit->protocol() == CommitProtocol::TwoPhase) {
      sim.tm_.set_state(d, TxnState::Committing);
      log(kCoordinator, "decide", fmt::format("{} commit", name(d)));
      cost = sim.config_.fsync_cost;
    }
    for (const ProtocolMessage& next : out) {
      send(kCoordinator, next.to, cost, [this, d, next] { segment_protocol(d, next); });
    }
    if (t->commit->committed()) finish_commit(d);
  }

  void local_commit(Txn& t, SegmentId seg) {
    SiteTxn& local = t.sites.at(seg);
    if (local.finished) return;
    local.finished = true;
    Site& st = site(seg);
    st.xids.mark_committed(local.xid);
    wake(seg, st.locks.release_all(t.dxid));
    log(seg, "commit-local", name(t.dxid));
  }

  void local_abort(Txn& t, SegmentId seg) {
    SiteTxn& local = t.sites.at(seg);
    if (local.finished) return;
    local.finished = true;
    Site& st = site(seg);
    st.xids.mark_aborted(local.xid);
    wake(seg, st.locks.release_all(t.dxid));
    log(seg, "abort-local", name(t.dxid));
  }

  void finish_commit(Dxid d) {
    Txn& t = *find(d);
    sim.tm_.mark_committed(d);
    // The coordinator and read-only participants release without messages.
    for (auto& [seg, local] : t.sites) local_commit(t, seg);
    t.record.outcome = TxnOutcome::Committed;
    t.record.protocol = t.commit->protocol();
    t.record.accounting = t.commit->accounting();
    log(kCoordinator, "committed", name(d));
    close(t, TxnOutcome::Committed);
    complete_step(t.session);
    txns.erase(d);
  }

  bool abort(Dxid d, std::string_view reason, bool victim, bool user) {
    Txn* t = find(d);
    if (t == nullptr) return false;
    if (t->commit && t->commit->decided()) return false;
    sim.tm_.mark_aborted(d);
    for (auto& [seg, local] : t->sites) local_abort(*t, seg);
    if (t->cpu_job) {
      sim.cpu_->kill(*t->cpu_job);
      jobs.erase(*t->cpu_job);
    }
    t->record.reason = std::string(reason);
    t->record.victim = victim;
    if (t->commit) {
      t->record.protocol = t->commit->protocol();
      t->record.accounting = t->commit->accounting();
    }
    log(kCoordinator, "aborted", fmt::format("{}: {}", name(d), reason));
    const std::size_t si = t->session;
    close(*t, TxnOutcome::Aborted);
    txns.erase(d);
    if (user) complete_step(si);
    else skip_transaction(si);
    return true;
  }

  void close(Txn& t, TxnOutcome outcome) {
    t.record.outcome = outcome;
    t.record.end_tick = sim.now_;
    if (t.update_lock) --inflight_updates;
    if (sim.resources_ && !t.record.group.empty()) on_finished_queries(sim.resources_->finish(to_underlying(t.dxid)));
    Session& s = session_of(t);
    s.txn.reset();
    s.records.push_back(sim.records_.size());
    sim.records_.push_back(t.record);
    const Dxid horizon = sim.tm_.truncation_horizon();
    for (Site& st : sites) st.xids.truncate(horizon);
  }

  // --- deadlock detector -------------------------------------------------

  LocalWaitGraph local_graph(SegmentId seg) const { return snapshot_local(site(seg).locks, sim.now_); }

  GlobalWaitForGraph collect() const {
    GlobalWaitForGraph g;
    for (const Site& st : sites) g.add_local(snapshot_local(st.locks, sim.now_));
    return g;
  }

  void arm_daemon() {
    if (daemon_armed || !sim.config_.gdd_enabled) return;
    daemon_armed = true;
    sim.push(sim.now_ + sim.config_.gdd.period, true, [this] { gdd_start(); });
  }

  bool work_left() {
    for (Session& s : sessions) {
      if (s.txn || s.busy || has_step(s)) return true;
    }
    return false;
  }

  void gdd_start() {
    const Tick skew = sim.config_.gdd.collection_skew;
    if (skew == 0) {
      gdd_detect(collect(), false);
      return;
    }
    // Collect one site after another; validate against the live tables.
    auto partial = std::make_shared<GlobalWaitForGraph>();
    for (std::size_t i = 0; i < sites.size(); ++i) {
      const SegmentId seg = sites[i].id;
      sim.push(sim.now_ + i * skew, true, [this, partial, seg] { partial->add_local(local_graph(seg)); });
    }
    sim.push(sim.now_ + sites.size() * skew, true, [this, partial] { gdd_detect(*partial, true); });
  }

  void gdd_detect(const GlobalWaitForGraph& g, bool check_edges) {
    log_gdd("pause", fmt::format("{} edges", g.edge_count()));
    LiveView live;
    live.running = [this](Dxid d) { return sim.tm_.is_running(d); };
    std::set<WaitEdge> now_edges;
    if (check_edges) {
      for (const auto& e : collect().edges()) now_edges.insert(e);
      live.edge_present = [&now_edges](const WaitEdge& e) { return now_edges.contains(e); };
    }
    GddRun run{sim.now_, detect(g, live, sim.config_.gdd.victim_policy), {}};
    auto label = [this](Dxid d) { return name(d); };
    for (const RemovalStep& step : run.verdict.trace) log_gdd("reduce", describe_step(step, label));
    std::string verdict(to_string(run.verdict.outcome));
    if (!run.verdict.cycle.empty()) {
      std::vector<std::string> names;
      for (Dxid d : run.verdict.cycle) names.push_back(name(d));
      verdict += fmt::format(" {}", fmt::join(names, "->"));
    }
    log_gdd("verdict", verdict);
    if (run.verdict.outcome == DetectionOutcome::Deadlock) {
      run.aborted = break_deadlock(run.verdict, sim);
      for (Dxid d : run.aborted) log_gdd("victim", name(d));
    }
    log_gdd("resume", "");
    const bool acted = !run.aborted.empty();
    sim.gdd_runs_.push_back(std::move(run));

    idle_gdd_runs = acted || work_done != work_at_last_gdd ? 0 : idle_gdd_runs + 1;
    work_at_last_gdd = work_done;
    daemon_armed = false;
    if (work_left() && idle_gdd_runs < 2) arm_daemon();
  }

  void log_gdd(std::string_view event, const std::string& details) { sim.log("gdd", event, details); }

  std::map<std::pair<std::size_t, std::uint64_t>, StepResult> results;
};

ClusterSim::ClusterSim(SimConfig config) : config_(std::move(config)) {
  config_.validate();
  if (!config_.groups.empty()) {
    resources_ = std::make_unique<ResourceManager>(config_.groups, config_.global_memory);
    if (config_.cores > 0) cpu_ = std::make_unique<CpuScheduler>(config_.cores, config_.groups);
  }
  impl_ = std::make_unique<Impl>(*this);
}

ClusterSim::~ClusterSim() = default;

void ClusterSim::push(Tick at, bool daemon, std::function<void()> fn) {
  if (!daemon) ++pending_work_;
  events_.push(Event{at, next_seq_++, daemon, std::move(fn)});
}

void ClusterSim::log(std::string_view site, std::string_view event, const std::string& details) {
  if (!config_.record_trace && !log_hook_) return;
  std::string line = fmt::format("{}|{}|{}|{}", now_, site, event, details);
  if (log_hook_) log_hook_(*this, line);
  if (config_.record_trace) trace_.push_back(std::move(line));
}

void ClusterSim::create_table(const TableDef& def, const std::vector<Row>& rows) {
  def.validate();
  for (auto& st : impl_->sites) {
    if (!st.store) continue;
    if (st.store->has_table(def.name)) throw std::invalid_argument(fmt::format("table {} already exists", def.name));
    st.store->create_table(def);
  }
  for (const Row& r : rows) {
    const SegmentId seg = route(r[def.key_index()], config_.segments);
    impl_->site(seg).store->insert(def.name, r, kFrozenXid, CommandId{0});
  }
}

std::size_t ClusterSim::add_session(SessionSpec spec) {
  if (!spec.group.empty()) {
    if (!resources_) throw std::invalid_argument(fmt::format("session {} names group {} but none are defined", spec.id, spec.group));
    (void)resources_->group_index(spec.group);
  }
  Impl::Session session;
  session.spec = std::move(spec);
  impl_->sessions.push_back(std::move(session));
  const std::size_t si = impl_->sessions.size() - 1;
  impl_->schedule_free_running(si);
  return si;
}

void ClusterSim::schedule(Tick at, std::function<void(ClusterSim&)> fn) {
  push(at, false, [this, fn = std::move(fn)] { fn(*this); });
}

void ClusterSim::run(Tick until) {
  if (impl_->work_left()) impl_->arm_daemon();
  while (true) {
    if (pending_work_ == 0) {
      // A step that blocks at once leaves the cluster quiescent.
      do {
        if (quiescent_hook_) quiescent_hook_(*this);
      } while (impl_->issue_scripted() && pending_work_ == 0);
      if (pending_work_ > 0) impl_->arm_daemon();
    }
    if (events_.empty()) break;
    if (events_.top().tick > until || events_.top().tick > config_.max_ticks) break;
    Event ev = events_.top();
    events_.pop();
    now_ = ev.tick;
    if (!ev.daemon) {
      --pending_work_;
      ++impl_->work_done;
    }
    ev.fn();
  }
}

std::uint64_t ClusterSim::trace_hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& line : trace_) {
    for (unsigned char c : line) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    h ^= '\n';
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<SessionReport> ClusterSim::sessions() const {
  std::vector<SessionReport> out;
  for (std::size_t i = 0; i < impl_->sessions.size(); ++i) {
    const auto& s = impl_->sessions[i];
    SessionReport r;
    r.id = s.spec.id;
    for (std::size_t idx : s.records) r.transactions.push_back(records_[idx]);
    if (s.txn) r.last_outcome = TxnOutcome::Open;
    else if (!r.transactions.empty()) r.last_outcome = r.transactions.back().outcome;
    r.blocked = s.busy && s.txn && impl_->txns.contains(*s.txn);
    r.steps_left = s.spec.steps.size() - std::min(s.next, s.spec.steps.size());
    for (const auto& [key, result] : impl_->results) {
      if (key.first == i) r.results.push_back(StepOutput{key.second, result.count, result.rows});
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::string ClusterSim::label(Dxid d) const { return impl_->name(d); }

GlobalWaitForGraph ClusterSim::collect_wait_graph() const { return impl_->collect(); }

std::vector<std::string> ClusterSim::blocked_sessions() const {
  std::vector<std::string> out;
  for (const auto& s : impl_->sessions) {
    if (!s.busy || !s.txn) continue;
    auto it = impl_->txns.find(*s.txn);
    if (it == impl_->txns.end()) continue;
    const auto& t = it->second;
    const bool waiting = !t.admitted || std::any_of(t.sites.begin(), t.sites.end(), [](const auto& kv) {
      return kv.second.blocked;
    });
    if (waiting) out.push_back(s.spec.id);
  }
  return out;
}

const SegmentStore& ClusterSim::store(SegmentId s) const {
  if (to_underlying(s) < 0 || to_underlying(s) >= config_.segments) throw std::out_of_range("no such segment");
  return *impl_->site(s).store;
}

const SegmentXidMap& ClusterSim::xid_map(SegmentId s) const { return impl_->site(s).xids; }
const LockTable& ClusterSim::lock_table(SegmentId s) const { return impl_->site(s).locks; }

std::string ClusterSim::dump_state() const {
  std::ostringstream out;
  const SegmentStore& first = store(segment_id(0));
  for (const auto& table : first.table_names()) {
    for (int i = 0; i < config_.segments; ++i) {
      const SegmentId seg = segment_id(i);
      for (const Row& r : store(seg).committed_rows(table, xid_map(seg))) {
        out << table << '|' << to_string(seg) << '|' << r[0] << ',' << r[1] << '\n';
      }
    }
  }
  return out.str();
}

std::optional<SiteReadView> ClusterSim::read_view(Dxid txn, SegmentId s) const {
  auto it = impl_->txns.find(txn);
  if (it == impl_->txns.end()) return std::nullopt;
  auto site = it->second.sites.find(s);
  if (site == it->second.sites.end()) return std::nullopt;
  return SiteReadView{site->second.xid, CommandId{it->second.command}, site->second.local_snapshot};
}

bool ClusterSim::is_running(Dxid txn) const { return tm_.exists(txn) && tm_.is_running(txn); }

void ClusterSim::abort_transaction(Dxid txn, std::string_view reason) { impl_->abort(txn, reason, true, false); }

Tick percentile(std::vector<Tick> values, double p) {
  if (values.empty()) return 0;
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(values.size())));
  return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

RunMetrics compute_metrics(const ClusterSim& sim, Tick ticks, std::string_view group) {
  RunMetrics m;
  m.ticks = ticks;
  m.max_inflight_updates = sim.max_inflight_updates();
  std::vector<Tick> latencies;
  for (const TxnRecord& r : sim.transactions()) {
    if (r.end_tick > ticks) continue;
    if (!group.empty() && r.group != group) continue;
    if (r.outcome == TxnOutcome::Aborted) {
      ++m.aborted;
      continue;
    }
    ++m.committed;
    latencies.push_back(r.latency());
    m.accounting += r.accounting;
    ++m.protocols[r.protocol];
  }
  m.tps = ticks == 0 ? 0 : static_cast<double>(m.committed) * 1000.0 / static_cast<double>(ticks);
  m.p50 = percentile(latencies, 50);
  m.p95 = percentile(latencies, 95);
  m.p99 = percentile(latencies, 99);
  return m;
}

std::string transactions_csv(const std::vector<TxnRecord>& records) {
  std::string out = "dxid,protocol,msg_prepare,msg_commit,fsyncs,latency_ticks\n";
  for (const TxnRecord& r : records) {
    if (r.outcome != TxnOutcome::Committed) continue;
    out += fmt::format("{},{},{},{},{},{}\n", to_underlying(r.dxid), to_string(r.protocol),
                       r.accounting.message(MessageType::Prepare), r.accounting.message(MessageType::Commit),
                       r.accounting.total_fsyncs(), r.latency());
  }
  return out;
}

}  // namespace htapsim
