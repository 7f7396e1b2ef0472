#pragma once

// Per-segment MVCC heap with hash distribution, and the resumable execution
// of one statement on one segment.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "htapsim/dtm.hpp"
#include "htapsim/lock_manager.hpp"
#include "htapsim/statement.hpp"
#include "htapsim/types.hpp"

namespace htapsim {

struct TableDef {
  std::string name;
  std::vector<std::string> columns{"c1", "c2"};
  std::string distributed_by = "c1";

  /// Throws std::invalid_argument unless there are two integer columns and
  /// the distribution key is one of them.
  void validate() const;
  /// Throws StatementError for an unknown column.
  std::size_t column_index(std::string_view column) const;
  std::size_t key_index() const { return column_index(distributed_by); }
};

using Row = std::array<std::int64_t, 2>;

struct TupleVersion {
  Ctid ctid{};
  Row values{};
  VersionHeader header;
};

/// Stable hash of a distribution-key value onto [0, n_segments).
SegmentId route(std::int64_t key, int n_segments);

bool matches(const Predicate& p, const TableDef& table, const Row& row);
/// The distribution-key values a predicate pins, or nullopt when some
/// disjunct leaves the key free and every segment must be scanned.
std::optional<std::set<std::int64_t>> pinned_keys(const Predicate& p, const TableDef& table);
Row apply_assignments(const std::vector<Assignment>& set, const TableDef& table, Row row);
/// Rejects statements the store cannot run, such as updating the key.
void check_statement(const Statement& st, const TableDef& table);

class SegmentStore {
 public:
  explicit SegmentStore(SegmentId segment) : segment_(segment) {}

  SegmentId segment() const noexcept { return segment_; }

  void create_table(const TableDef& def);
  bool has_table(std::string_view name) const;
  const TableDef& table(std::string_view name) const;
  std::vector<std::string> table_names() const;

  /// New logical tuple; returns its heap index.
  std::size_t insert(std::string_view table, const Row& values, LocalXid xmin, CommandId cmin);
  /// Marks heap entry `index` deleted by `xmax`.
  void stamp_xmax(std::string_view table, std::size_t index, LocalXid xmax, CommandId cmax);
  /// Appends the successor version of heap entry `index`.
  std::size_t add_successor(std::string_view table, std::size_t index, const Row& values, LocalXid xmin,
                            CommandId cmin);

  const std::vector<TupleVersion>& heap(std::string_view table) const;

  /// Heap indices of versions visible to `self`, in heap order.
  std::vector<std::size_t> visible_versions(std::string_view table, const SelfView& self,
                                            const SegmentXidMap& xids) const;
  /// As above, restricted to versions whose distribution key is in `keys`.
  std::vector<std::size_t> visible_versions(std::string_view table, const std::set<std::int64_t>& keys,
                                            const SelfView& self, const SegmentXidMap& xids) const;
  std::vector<Row> scan(std::string_view table, const SelfView& self, const SegmentXidMap& xids) const;

  /// Rows whose creator committed and whose deleter did not, sorted: the
  /// state every later transaction would see.
  std::vector<Row> committed_rows(std::string_view table, const SegmentXidMap& xids) const;

  /// Version chains are linear and carry at most one successor whose creator
  /// has not aborted. Returns the first violation.
  std::optional<std::string> check_chains(const SegmentXidMap& xids) const;

 private:
  struct Table {
    TableDef def;
    std::vector<TupleVersion> heap;
    std::map<std::int64_t, std::vector<std::size_t>> by_key;  // heap indices per key value
    std::uint64_t next_ctid = 1;
  };
  Table& get(std::string_view name);
  const Table& get(std::string_view name) const;

  SegmentId segment_;
  std::map<std::string, Table, std::less<>> tables_;
};

/// Relation lock mode a statement takes on every site it touches.
LockMode relation_lock_mode(const Statement& st, bool legacy_locking);

struct ExecContext {
  Dxid txn{};
  LocalXid xid{};
  CommandId command{};
  const DistributedSnapshot* snapshot = nullptr;
  const LocalSnapshot* local_snapshot = nullptr;
  LockTable* locks = nullptr;
  SegmentStore* store = nullptr;  // null on the coordinator
  const SegmentXidMap* xids = nullptr;
  bool legacy_locking = false;
  Tick now = 0;
};

enum class ExecStatus : std::uint8_t { Done, Blocked, Failed };

struct ExecResult {
  ExecStatus status = ExecStatus::Done;
  std::size_t count = 0;
  std::vector<Row> rows;
  std::string error;
  /// The lock being waited for when Blocked.
  std::optional<LockTag> waiting_on;
  /// Other transactions' requests granted by tuple locks this run released.
  std::vector<LockRequest> promoted;
};

/// One statement on one site. run() advances until the statement finishes,
/// fails or has to wait for a lock; after the awaited lock is granted, run()
/// is called again and continues where it stopped.
class SegmentExecution {
 public:
  /// `rows` are the insert rows routed to this site. With `relation_only` the
  /// execution just takes the relation lock (coordinator side).
  SegmentExecution(Statement st, std::vector<Row> rows, bool relation_only);

  ExecResult run(const ExecContext& ctx);

  bool wrote() const noexcept { return wrote_; }
  const Statement& statement() const noexcept { return st_; }

 private:
  enum class Phase : std::uint8_t { RelationLock, Scan, TupleLock, TupleCheck, Apply, Done };

  Statement st_;
  std::vector<Row> insert_rows_;
  bool relation_only_;
  Phase phase_ = Phase::RelationLock;
  std::optional<LockTag> requested_;  // granted by promotion while blocked
  std::vector<std::size_t> targets_;
  std::size_t cursor_ = 0;
  std::size_t count_ = 0;
  bool wrote_ = false;
  std::vector<LockRequest> promoted_;
};

}  // namespace htapsim
