#include "htapsim/dtm.hpp"

#include <algorithm>
#include <numeric>
#include <utility>

#include <fmt/format.h>

namespace htapsim {

std::string_view to_string(TxnState s) noexcept {
  switch (s) {
    case TxnState::Active: return "active";
    case TxnState::Preparing: return "preparing";
    case TxnState::Committing: return "committing";
    case TxnState::Committed: return "committed";
    case TxnState::Aborted: return "aborted";
  }
  return "?";
}

const TransactionDescriptor& TransactionManager::begin(Tick now) {
  last_ = Dxid{to_underlying(last_) + 1};
  unfinished_.insert(last_);
  TransactionDescriptor& t = txns_[last_];
  t.dxid = last_;
  t.begin_tick = now;
  snapshots_[last_] = current_snapshot();
  return t;
}

DistributedSnapshot TransactionManager::current_snapshot() const {
  return DistributedSnapshot{unfinished_, max_committed_};
}

std::uint64_t TransactionManager::hold_snapshot() {
  const std::uint64_t h = next_handle_++;
  held_[h] = current_snapshot();
  return h;
}

const DistributedSnapshot& TransactionManager::held_snapshot(std::uint64_t handle) const {
  auto it = held_.find(handle);
  if (it == held_.end()) throw ProtocolError(fmt::format("no held snapshot {}", handle));
  return it->second;
}

void TransactionManager::release_snapshot(std::uint64_t handle) { held_.erase(handle); }

const TransactionDescriptor& TransactionManager::descriptor(Dxid d) const {
  auto it = txns_.find(d);
  if (it == txns_.end()) throw ProtocolError(fmt::format("unknown transaction {}", to_string(d)));
  return it->second;
}

TransactionDescriptor& TransactionManager::descriptor(Dxid d) {
  return const_cast<TransactionDescriptor&>(std::as_const(*this).descriptor(d));
}

const DistributedSnapshot& TransactionManager::snapshot_of(Dxid d) const {
  auto it = snapshots_.find(d);
  if (it == snapshots_.end()) {
    throw ProtocolError(fmt::format("transaction {} has no live snapshot", to_string(d)));
  }
  return it->second;
}

void TransactionManager::set_state(Dxid d, TxnState s) {
  TransactionDescriptor& t = descriptor(d);
  if (t.finished()) throw ProtocolError(fmt::format("transaction {} already {}", to_string(d), to_string(t.state)));
  if (s == TxnState::Committed) return mark_committed(d);
  if (s == TxnState::Aborted) return mark_aborted(d);
  t.state = s;
}

void TransactionManager::mark_committed(Dxid d) {
  TransactionDescriptor& t = descriptor(d);
  if (t.state == TxnState::Committed) return;
  if (t.state == TxnState::Aborted) {
    throw ProtocolError(fmt::format("transaction {} is aborted and cannot commit", to_string(d)));
  }
  t.state = TxnState::Committed;
  max_committed_ = std::max(max_committed_, d);
  unfinished_.erase(d);
  snapshots_.erase(d);
}

void TransactionManager::mark_aborted(Dxid d) {
  TransactionDescriptor& t = descriptor(d);
  if (t.state == TxnState::Aborted) return;
  if (t.state == TxnState::Committed) {
    throw ProtocolError(fmt::format("transaction {} is committed and cannot abort", to_string(d)));
  }
  t.state = TxnState::Aborted;
  unfinished_.erase(d);
  snapshots_.erase(d);
}

bool TransactionManager::is_running(Dxid d) const {
  auto it = txns_.find(d);
  return it != txns_.end() && !it->second.finished();
}

Dxid TransactionManager::truncation_horizon() const {
  Dxid h = next_dxid();
  auto consider = [&](const DistributedSnapshot& s) {
    if (!s.in_progress.empty()) h = std::min(h, *s.in_progress.begin());
  };
  for (const auto& [d, s] : snapshots_) consider(s);
  for (const auto& [handle, s] : held_) consider(s);
  return h;
}

SegmentXidMap::SegmentXidMap(SegmentId segment, std::uint64_t first_xid) : segment_(segment), next_(first_xid) {
  if (first_xid == 0) throw std::invalid_argument("local xid 0 is reserved for preloaded rows");
}

LocalXid SegmentXidMap::assign(Dxid d) {
  if (auto existing = local_of(d)) return *existing;
  const LocalXid x{next_++};
  clog_[x] = Entry{d, LocalStatus::InProgress, false};
  by_dxid_[d] = x;
  in_progress_.insert(x);
  return x;
}

std::optional<LocalXid> SegmentXidMap::local_of(Dxid d) const {
  auto it = by_dxid_.find(d);
  if (it == by_dxid_.end()) return std::nullopt;
  return it->second;
}

const SegmentXidMap::Entry& SegmentXidMap::entry(LocalXid x) const {
  static const Entry frozen{std::nullopt, LocalStatus::Committed, true};
  if (x == kFrozenXid) return frozen;
  auto it = clog_.find(x);
  if (it == clog_.end()) {
    throw IntegrityError(fmt::format("{} never assigned local xid {}", to_string(segment_), to_string(x)));
  }
  return it->second;
}

void SegmentXidMap::mark_committed(LocalXid x) {
  if (x == kFrozenXid) throw ProtocolError("the frozen xid cannot change state");
  Entry& e = mutable_entry(x);
  if (e.status == LocalStatus::Aborted) {
    throw ProtocolError(fmt::format("local xid {} is aborted", to_string(x)));
  }
  e.status = LocalStatus::Committed;
  in_progress_.erase(x);
}

void SegmentXidMap::mark_aborted(LocalXid x) {
  if (x == kFrozenXid) throw ProtocolError("the frozen xid cannot change state");
  Entry& e = mutable_entry(x);
  if (e.status == LocalStatus::Committed) {
    throw ProtocolError(fmt::format("local xid {} is committed", to_string(x)));
  }
  e.status = LocalStatus::Aborted;
  in_progress_.erase(x);
}

SegmentXidMap::Entry& SegmentXidMap::mutable_entry(LocalXid x) {
  auto it = clog_.find(x);
  if (it == clog_.end()) {
    throw IntegrityError(fmt::format("{} never assigned local xid {}", to_string(segment_), to_string(x)));
  }
  return it->second;
}

LocalSnapshot SegmentXidMap::take_snapshot() const { return LocalSnapshot{in_progress_, LocalXid{next_}}; }

std::size_t SegmentXidMap::truncate(Dxid horizon) {
  std::size_t n = 0;
  for (auto it = by_dxid_.begin(); it != by_dxid_.end() && it->first < horizon;) {
    Entry& e = clog_.at(it->second);
    if (e.status == LocalStatus::InProgress) {
      ++it;
      continue;
    }
    e.dxid.reset();
    e.truncated = true;
    it = by_dxid_.erase(it);
    ++n;
  }
  return n;
}

std::size_t SegmentXidMap::mapped_count() const { return by_dxid_.size(); }

bool xid_visible(LocalXid x, CommandId cid, const SelfView& self, const SegmentXidMap& map) {
  if (x == kFrozenXid) return true;
  if (self.local_xid && x == *self.local_xid) return cid < self.current_command;
  const SegmentXidMap::Entry& e = map.entry(x);
  if (e.status != LocalStatus::Committed) return false;
  if (e.truncated) {
    if (self.local_snapshot == nullptr) {
      throw ProtocolError("visibility of a truncated xid needs the local snapshot");
    }
    return !self.local_snapshot->in_progress.contains(x) && x < self.local_snapshot->xmax;
  }
  if (!e.dxid) throw IntegrityError(fmt::format("local xid {} has no distributed xid", to_string(x)));
  if (self.snapshot == nullptr) throw ProtocolError("visibility needs a distributed snapshot");
  const Dxid d = *e.dxid;
  return !self.snapshot->in_progress.contains(d) && d <= self.snapshot->max_committed;
}

bool visible(const VersionHeader& v, const SelfView& self, const SegmentXidMap& map) {
  if (!xid_visible(v.xmin, v.cmin, self, map)) return false;
  return !v.xmax || !xid_visible(*v.xmax, v.cmax, self, map);
}

std::string_view to_string(CommitProtocol p) noexcept {
  switch (p) {
    case CommitProtocol::ReadOnly: return "ro";
    case CommitProtocol::OnePhase: return "1pc";
    case CommitProtocol::TwoPhase: return "2pc";
  }
  return "?";
}

std::string_view to_string(MessageType m) noexcept {
  switch (m) {
    case MessageType::Prepare: return "prepare";
    case MessageType::PrepareOk: return "prepare_ok";
    case MessageType::Commit: return "commit";
    case MessageType::CommitOk: return "commit_ok";
    case MessageType::Abort: return "abort";
  }
  return "?";
}

std::string_view to_string(FsyncSite f) noexcept {
  switch (f) {
    case FsyncSite::SegmentPrepare: return "segment_prepare";
    case FsyncSite::CoordinatorCommit: return "coordinator_commit";
    case FsyncSite::SegmentCommit: return "segment_commit";
  }
  return "?";
}

std::uint64_t CommitAccounting::total_fsyncs() const {
  return std::accumulate(fsyncs.begin(), fsyncs.end(), std::uint64_t{0});
}

std::uint64_t CommitAccounting::total_messages() const {
  return std::accumulate(messages.begin(), messages.end(), std::uint64_t{0});
}

CommitAccounting& CommitAccounting::operator+=(const CommitAccounting& other) {
  for (std::size_t i = 0; i < messages.size(); ++i) messages[i] += other.messages[i];
  for (std::size_t i = 0; i < fsyncs.size(); ++i) fsyncs[i] += other.fsyncs[i];
  return *this;
}

CommitProtocol choose_protocol(std::size_t write_segments, bool one_phase_enabled) {
  if (write_segments == 0) return CommitProtocol::ReadOnly;
  if (write_segments == 1 && one_phase_enabled) return CommitProtocol::OnePhase;
  return CommitProtocol::TwoPhase;
}

CommitProtocolRun::CommitProtocolRun(Dxid txn, std::set<SegmentId> write_segments, bool one_phase_enabled)
    : txn_(txn),
      segments_(std::move(write_segments)),
      protocol_(choose_protocol(segments_.size(), one_phase_enabled)) {}

std::vector<ProtocolMessage> CommitProtocolRun::start() {
  if (started_) throw ProtocolError(fmt::format("commit of {} already started", to_string(txn_)));
  started_ = true;
  std::vector<ProtocolMessage> out;
  switch (protocol_) {
    case CommitProtocol::ReadOnly:
      decided_ = true;
      done_ = true;
      return out;
    case CommitProtocol::OnePhase:
      decided_ = true;
      for (SegmentId s : segments_) out.push_back({MessageType::Commit, kCoordinator, s});
      break;
    case CommitProtocol::TwoPhase:
      for (SegmentId s : segments_) out.push_back({MessageType::Prepare, kCoordinator, s});
      break;
  }
  awaiting_ = segments_;
  for (const auto& m : out) ++acct_.message(m.type);
  return out;
}

std::optional<ProtocolMessage> CommitProtocolRun::on_segment_message(const ProtocolMessage& m,
                                                                     bool prepare_succeeds) {
  if (!segments_.contains(m.to)) {
    throw ProtocolError(fmt::format("{} is not a participant of {}", to_string(m.to), to_string(txn_)));
  }
  std::optional<ProtocolMessage> reply;
  switch (m.type) {
    case MessageType::Prepare:
      if (prepare_succeeds) ++acct_.fsync(FsyncSite::SegmentPrepare);
      reply = ProtocolMessage{MessageType::PrepareOk, m.to, kCoordinator, prepare_succeeds};
      break;
    case MessageType::Commit:
      ++acct_.fsync(FsyncSite::SegmentCommit);
      reply = ProtocolMessage{MessageType::CommitOk, m.to, kCoordinator, true};
      break;
    case MessageType::Abort:
      return std::nullopt;
    default:
      throw ProtocolError(fmt::format("segment cannot handle {}", to_string(m.type)));
  }
  ++acct_.message(reply->type);
  return reply;
}

std::vector<ProtocolMessage> CommitProtocolRun::on_coordinator_message(const ProtocolMessage& m) {
  std::vector<ProtocolMessage> out;
  if (done_) return out;  // late votes after an abort
  if (!awaiting_.erase(m.from)) {
    throw ProtocolError(fmt::format("unexpected {} from {}", to_string(m.type), to_string(m.from)));
  }
  if (m.type == MessageType::PrepareOk) {
    if (!m.ok) {
      aborted_ = true;
      done_ = true;
      for (SegmentId s : segments_) {
        if (s != m.from) out.push_back({MessageType::Abort, kCoordinator, s});
      }
    } else if (awaiting_.empty()) {
      ++acct_.fsync(FsyncSite::CoordinatorCommit);
      decided_ = true;
      for (SegmentId s : segments_) out.push_back({MessageType::Commit, kCoordinator, s});
      awaiting_ = segments_;
    }
  } else if (m.type == MessageType::CommitOk) {
    if (awaiting_.empty()) done_ = true;
  } else {
    throw ProtocolError(fmt::format("coordinator cannot handle {}", to_string(m.type)));
  }
  for (const auto& o : out) ++acct_.message(o.type);
  return out;
}

CommitOutcome run_commit_protocol(const std::set<SegmentId>& write_segments, bool one_phase_enabled,
                                  const std::set<SegmentId>& failing_prepare) {
  CommitProtocolRun run(Dxid{1}, write_segments, one_phase_enabled);
  std::vector<ProtocolMessage> pending = run.start();
  while (!pending.empty()) {
    std::vector<ProtocolMessage> next;
    for (const auto& m : pending) {
      auto reply = run.on_segment_message(m, !failing_prepare.contains(m.to));
      if (!reply) continue;
      auto follow = run.on_coordinator_message(*reply);
      next.insert(next.end(), follow.begin(), follow.end());
    }
    pending = std::move(next);
  }
  return CommitOutcome{run.protocol(), run.committed(), run.accounting()};
}

}  // namespace htapsim
