#pragma once

// Distributed transaction management: dxid allocation and distributed
// snapshots at the coordinator, local xid assignment and the local-to-
// distributed xid mapping on segments, tuple visibility, and the one- and
// two-phase commit protocols with message/fsync accounting.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string_view>
#include <vector>

#include "htapsim/types.hpp"

namespace htapsim {

enum class TxnState : std::uint8_t { Active, Preparing, Committing, Committed, Aborted };

std::string_view to_string(TxnState s) noexcept;

struct TransactionDescriptor {
  Dxid dxid{};
  std::map<SegmentId, LocalXid> local_xids;
  TxnState state = TxnState::Active;
  std::set<SegmentId> write_segments;
  Tick begin_tick = 0;

  bool finished() const noexcept { return state == TxnState::Committed || state == TxnState::Aborted; }
};

struct DistributedSnapshot {
  std::set<Dxid> in_progress;
  Dxid max_committed{0};

  bool operator==(const DistributedSnapshot&) const = default;
};

/// Coordinator-side state: allocation, snapshots and global outcomes.
class TransactionManager {
 public:
  /// Allocates the next dxid (previous + 1, starting at 1) and takes its
  /// transaction-level snapshot, which includes the new dxid itself.
  const TransactionDescriptor& begin(Tick now);

  /// A snapshot of the current state, not owned by any transaction. It stays
  /// live, and so holds back truncation, until released.
  std::uint64_t hold_snapshot();
  const DistributedSnapshot& held_snapshot(std::uint64_t handle) const;
  void release_snapshot(std::uint64_t handle);

  DistributedSnapshot current_snapshot() const;

  const TransactionDescriptor& descriptor(Dxid d) const;
  TransactionDescriptor& descriptor(Dxid d);
  bool exists(Dxid d) const { return txns_.contains(d); }
  const DistributedSnapshot& snapshot_of(Dxid d) const;

  void set_state(Dxid d, TxnState s);
  /// Idempotent; records the global commit point.
  void mark_committed(Dxid d);
  void mark_aborted(Dxid d);
  bool is_running(Dxid d) const;

  Dxid max_committed() const noexcept { return max_committed_; }
  Dxid next_dxid() const noexcept { return Dxid{to_underlying(last_) + 1}; }

  /// Oldest dxid any live snapshot may still treat as running.
  Dxid truncation_horizon() const;

  const std::map<Dxid, TransactionDescriptor>& transactions() const noexcept { return txns_; }

 private:
  Dxid last_{0};
  Dxid max_committed_{0};
  std::set<Dxid> unfinished_;
  std::map<Dxid, TransactionDescriptor> txns_;
  std::map<Dxid, DistributedSnapshot> snapshots_;  // of unfinished transactions
  std::map<std::uint64_t, DistributedSnapshot> held_;
  std::uint64_t next_handle_ = 1;
};

enum class LocalStatus : std::uint8_t { InProgress, Committed, Aborted };

/// Creator of preloaded rows: committed and visible to every snapshot.
inline constexpr LocalXid kFrozenXid{0};

/// Local snapshot taken when a transaction first reaches a segment.
struct LocalSnapshot {
  std::set<LocalXid> in_progress;
  LocalXid xmax{0};  // first local xid not yet assigned
};

/// One segment's commit log and local <-> distributed xid mapping.
class SegmentXidMap {
 public:
  struct Entry {
    std::optional<Dxid> dxid;  // cleared once truncated
    LocalStatus status = LocalStatus::InProgress;
    bool truncated = false;
  };

  /// `first_xid` (at least 1) offsets the counter so local xids differ
  /// between segments.
  explicit SegmentXidMap(SegmentId segment, std::uint64_t first_xid = 1);

  SegmentId segment() const noexcept { return segment_; }

  LocalXid assign(Dxid d);
  std::optional<LocalXid> local_of(Dxid d) const;
  void mark_committed(LocalXid x);
  void mark_aborted(LocalXid x);

  LocalSnapshot take_snapshot() const;

  /// Throws IntegrityError for an xid this segment never assigned.
  const Entry& entry(LocalXid x) const;
  LocalStatus status(LocalXid x) const { return entry(x).status; }

  /// Drops the dxid of every finished entry below `horizon`. Returns the
  /// number of entries truncated by this call.
  std::size_t truncate(Dxid horizon);
  std::size_t mapped_count() const;

 private:
  Entry& mutable_entry(LocalXid x);

  SegmentId segment_;
  std::uint64_t next_;
  std::map<LocalXid, Entry> clog_;
  std::set<LocalXid> in_progress_;
  std::map<Dxid, LocalXid> by_dxid_;
};

struct VersionHeader {
  LocalXid xmin{};
  CommandId cmin{};
  std::optional<LocalXid> xmax;
  CommandId cmax{};
};

/// Everything the reading transaction contributes to a visibility decision
/// on one segment.
struct SelfView {
  std::optional<LocalXid> local_xid;
  CommandId current_command{};
  const DistributedSnapshot* snapshot = nullptr;
  const LocalSnapshot* local_snapshot = nullptr;  // used for truncated xids
};

/// Whether the effects of local xid `x` are visible to `self`.
bool xid_visible(LocalXid x, CommandId cid, const SelfView& self, const SegmentXidMap& map);
bool visible(const VersionHeader& v, const SelfView& self, const SegmentXidMap& map);

enum class CommitProtocol : std::uint8_t { ReadOnly, OnePhase, TwoPhase };
enum class MessageType : std::uint8_t { Prepare, PrepareOk, Commit, CommitOk, Abort };
enum class FsyncSite : std::uint8_t { SegmentPrepare, CoordinatorCommit, SegmentCommit };

std::string_view to_string(CommitProtocol p) noexcept;
std::string_view to_string(MessageType m) noexcept;
std::string_view to_string(FsyncSite f) noexcept;

struct CommitAccounting {
  std::array<std::uint64_t, 5> messages{};
  std::array<std::uint64_t, 3> fsyncs{};

  std::uint64_t& message(MessageType t) { return messages[static_cast<std::size_t>(t)]; }
  std::uint64_t message(MessageType t) const { return messages[static_cast<std::size_t>(t)]; }
  std::uint64_t& fsync(FsyncSite s) { return fsyncs[static_cast<std::size_t>(s)]; }
  std::uint64_t fsync(FsyncSite s) const { return fsyncs[static_cast<std::size_t>(s)]; }
  std::uint64_t total_fsyncs() const;
  std::uint64_t total_messages() const;

  CommitAccounting& operator+=(const CommitAccounting& other);
  bool operator==(const CommitAccounting&) const = default;
};

CommitProtocol choose_protocol(std::size_t write_segments, bool one_phase_enabled);

struct ProtocolMessage {
  MessageType type = MessageType::Commit;
  SegmentId from = kCoordinator;
  SegmentId to = kCoordinator;
  bool ok = true;  // PrepareOk carrying a failure vote when false
};

/// The coordinator's view of one commit, driven by message delivery. The
/// cluster delivers each outbound message, lets the segment act on it and
/// feeds the reply back.
class CommitProtocolRun {
 public:
  CommitProtocolRun(Dxid txn, std::set<SegmentId> write_segments, bool one_phase_enabled);

  Dxid txn() const noexcept { return txn_; }
  CommitProtocol protocol() const noexcept { return protocol_; }

  /// Messages the coordinator sends first (empty for read-only).
  std::vector<ProtocolMessage> start();
  /// Segment side: handles a coordinator message, records segment fsyncs and
  /// returns the reply (nullopt for Abort). `prepare_succeeds` is the
  /// segment's vote when the message is Prepare.
  std::optional<ProtocolMessage> on_segment_message(const ProtocolMessage& m, bool prepare_succeeds = true);
  /// Coordinator side: handles a reply and returns the follow-up messages.
  std::vector<ProtocolMessage> on_coordinator_message(const ProtocolMessage& m);

  bool done() const noexcept { return done_; }
  bool committed() const noexcept { return done_ && !aborted_; }
  bool aborted() const noexcept { return aborted_; }
  /// True once the coordinator has durably decided to commit.
  bool decided() const noexcept { return decided_; }
  const CommitAccounting& accounting() const noexcept { return acct_; }

 private:
  Dxid txn_;
  std::set<SegmentId> segments_;
  CommitProtocol protocol_;
  std::set<SegmentId> awaiting_;
  bool started_ = false;
  bool decided_ = false;
  bool done_ = false;
  bool aborted_ = false;
  CommitAccounting acct_;
};

struct CommitOutcome {
  CommitProtocol protocol = CommitProtocol::ReadOnly;
  bool committed = false;
  CommitAccounting accounting;
};

/// Runs a commit to completion with instantaneous delivery. A segment in
/// `failing_prepare` votes no in the prepare round.
CommitOutcome run_commit_protocol(const std::set<SegmentId>& write_segments, bool one_phase_enabled,
                                  const std::set<SegmentId>& failing_prepare = {});

}  // namespace htapsim
