#pragma once

// Per-segment object lock service: the eight heavyweight lock modes, their
// conflict matrix, FIFO grant queues and two-phase release.
//
// Lock modes and conflicts:
//
//   level  mode                      conflicts with
//   1      AccessShare               8
//   2      RowShare                  7 8
//   3      RowExclusive              5 6 7 8
//   4      ShareUpdateExclusive      4 5 6 7 8
//   5      Share                     3 4 6 7 8
//   6      ShareRowExclusive         3 4 5 6 7 8
//   7      Exclusive                 2 3 4 5 6 7 8
//   8      AccessExclusive           1 2 3 4 5 6 7 8

#include <array>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "htapsim/types.hpp"

namespace htapsim {

enum class LockMode : std::uint8_t {
  AccessShare = 1,
  RowShare = 2,
  RowExclusive = 3,
  ShareUpdateExclusive = 4,
  Share = 5,
  ShareRowExclusive = 6,
  Exclusive = 7,
  AccessExclusive = 8,
};

inline constexpr std::array<LockMode, 8> kAllLockModes{
    LockMode::AccessShare,          LockMode::RowShare,
    LockMode::RowExclusive,         LockMode::ShareUpdateExclusive,
    LockMode::Share,                LockMode::ShareRowExclusive,
    LockMode::Exclusive,            LockMode::AccessExclusive,
};

constexpr int level(LockMode m) noexcept { return static_cast<int>(m); }

/// Throws ProtocolError unless 1 <= level <= 8.
LockMode lock_mode_from_level(int level);

std::string_view to_string(LockMode m) noexcept;

/// Accepts "AccessExclusive", "access exclusive", "AccessExclusiveLock" or a
/// numeric level.
std::optional<LockMode> parse_lock_mode(std::string_view text);

/// True iff holding `a` prevents granting `b` to another transaction.
bool conflicts(LockMode a, LockMode b) noexcept;

enum class LockTagKind : std::uint8_t { Relation, Tuple, Transaction };

std::string_view to_string(LockTagKind k) noexcept;

struct LockTag {
  LockTagKind kind = LockTagKind::Relation;
  SegmentId segment = kCoordinator;
  std::string relation;   // empty for transaction tags
  std::uint64_t object = 0;  // ctid for tuples, local xid for transactions

  static LockTag relation_lock(SegmentId segment, std::string relation);
  static LockTag tuple_lock(SegmentId segment, std::string relation, Ctid ctid);
  static LockTag transaction_lock(SegmentId segment, LocalXid xid);

  std::string describe() const;

  auto operator<=>(const LockTag&) const = default;
};

enum class LockStatus : std::uint8_t { Granted, Waiting };

struct LockRequest {
  Dxid txn{};
  LockTag tag;
  LockMode mode = LockMode::AccessShare;
  LockStatus status = LockStatus::Waiting;
  Tick enqueue_tick = 0;
};

enum class AcquireOutcome : std::uint8_t { Granted, Blocked };

struct AcquireResult {
  AcquireOutcome outcome = AcquireOutcome::Granted;
  /// Transactions the request is queued behind (holders first, then earlier
  /// waiters). Empty when granted.
  std::vector<Dxid> blockers;
};

/// One segment's lock table. All operations on a table are applied in a total
/// order by the caller.
///
/// Transaction tags behave like PostgreSQL's XactLockTableWait: the owner
/// holds its own tag exclusively from registration until release_all; any
/// other transaction requesting it only waits for the owner to finish and is
/// never left holding the tag once granted.
class LockTable {
 public:
  using Queue = std::vector<LockRequest>;

  explicit LockTable(SegmentId segment);

  SegmentId segment() const noexcept { return segment_; }

  /// Makes `txn` known on this segment. When `local_xid` is given the
  /// transaction takes the exclusive self-lock on its transaction tag.
  void register_txn(Dxid txn, std::optional<LocalXid> local_xid = std::nullopt);
  bool is_registered(Dxid txn) const;

  /// Grants when no other transaction holds a conflicting mode and no other
  /// transaction waits ahead in a conflicting mode; otherwise queues the
  /// request. Re-requesting a held mode is a no-op grant.
  AcquireResult acquire(Dxid txn, const LockTag& tag, LockMode mode, Tick now);

  /// Drops every grant and wait of `txn`, unregisters it and re-runs the
  /// affected queues. Returns the requests promoted to Granted.
  std::vector<LockRequest> release_all(Dxid txn);

  /// Mid-transaction release of a single tuple lock.
  std::vector<LockRequest> release_tuple_lock(Dxid txn, const LockTag& tag);

  const std::map<LockTag, Queue>& queues() const noexcept { return queues_; }
  std::vector<LockRequest> held_by(Dxid txn) const;
  std::optional<LockRequest> waiting_request(Dxid txn) const;
  bool holds(Dxid txn, const LockTag& tag, std::optional<LockMode> mode = {}) const;
  std::set<Dxid> registered() const;

  /// Checks the grant invariants; returns a description of the first
  /// violation or nullopt.
  std::optional<std::string> check_invariants() const;

 private:
  struct TxnEntry {
    std::optional<LocalXid> local_xid;
    std::set<LockTag> tags;
  };

  bool is_owner(Dxid txn, const LockTag& tag) const;
  std::vector<Dxid> blockers_for(const Queue& queue, std::size_t position_or_end,
                                 Dxid txn, LockMode mode) const;
  std::vector<LockRequest> regrant(const LockTag& tag);
  void erase_if_empty(const LockTag& tag);

  SegmentId segment_;
  std::map<LockTag, Queue> queues_;
  std::map<Dxid, TxnEntry> txns_;
  std::map<LocalXid, Dxid> owners_;
};

}  // namespace htapsim
