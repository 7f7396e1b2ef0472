#include "htapsim/segment_store.hpp"

#include <algorithm>
#include <stdexcept>

#include <fmt/format.h>

namespace htapsim {

void TableDef::validate() const {
  if (name.empty()) throw std::invalid_argument("table needs a name");
  if (columns.size() != 2) {
    throw std::invalid_argument(fmt::format("table {} must have exactly two integer columns", name));
  }
  if (columns[0] == columns[1]) throw std::invalid_argument(fmt::format("table {} repeats a column", name));
  if (std::find(columns.begin(), columns.end(), distributed_by) == columns.end()) {
    throw std::invalid_argument(fmt::format("table {} is distributed by unknown column {}", name, distributed_by));
  }
}

std::size_t TableDef::column_index(std::string_view column) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == column) return i;
  }
  throw StatementError(fmt::format("table {} has no column {}", name, column));
}

SegmentId route(std::int64_t key, int n_segments) {
  if (n_segments < 1) throw std::invalid_argument("route needs at least one segment");
  // splitmix64 finalizer
  auto z = static_cast<std::uint64_t>(key);
  z = (z ^ (z >> 30U)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27U)) * 0x94d049bb133111ebULL;
  z ^= z >> 31U;
  return SegmentId{static_cast<int>(z % static_cast<std::uint64_t>(n_segments))};
}

bool matches(const Predicate& p, const TableDef& table, const Row& row) {
  if (p.always_true()) return true;
  return std::any_of(p.disjuncts.begin(), p.disjuncts.end(), [&](const std::vector<Equality>& conj) {
    return std::all_of(conj.begin(), conj.end(),
                       [&](const Equality& e) { return row[table.column_index(e.column)] == e.value; });
  });
}

std::optional<std::set<std::int64_t>> pinned_keys(const Predicate& p, const TableDef& table) {
  if (p.always_true()) return std::nullopt;
  std::set<std::int64_t> keys;
  for (const auto& conj : p.disjuncts) {
    std::optional<std::int64_t> key;
    bool contradiction = false;
    for (const auto& e : conj) {
      if (e.column != table.distributed_by) continue;
      if (key && *key != e.value) contradiction = true;
      key = e.value;
    }
    if (!key) return std::nullopt;
    if (!contradiction) keys.insert(*key);
  }
  return keys;
}

Row apply_assignments(const std::vector<Assignment>& set, const TableDef& table, Row row) {
  for (const auto& a : set) {
    std::int64_t& v = row[table.column_index(a.column)];
    v = a.increment ? v + a.value : a.value;
  }
  return row;
}

void check_statement(const Statement& st, const TableDef& table) {
  for (const auto& conj : st.where.disjuncts) {
    for (const auto& e : conj) (void)table.column_index(e.column);
  }
  for (const auto& a : st.set) {
    (void)table.column_index(a.column);
    if (a.column == table.distributed_by) {
      throw StatementError(fmt::format("cannot update distribution key column {}", a.column));
    }
  }
  for (const auto& r : st.rows) {
    if (r.size() != table.columns.size()) {
      throw StatementError(fmt::format("insert into {} needs {} values per row", table.name, table.columns.size()));
    }
  }
}

void SegmentStore::create_table(const TableDef& def) {
  def.validate();
  if (has_table(def.name)) throw std::invalid_argument(fmt::format("table {} already exists", def.name));
  tables_.emplace(def.name, Table{def, {}, {}, 1});
}

bool SegmentStore::has_table(std::string_view name) const { return tables_.find(name) != tables_.end(); }

SegmentStore::Table& SegmentStore::get(std::string_view name) {
  auto it = tables_.find(name);
  if (it == tables_.end()) throw StatementError(fmt::format("no table {}", name));
  return it->second;
}

const SegmentStore::Table& SegmentStore::get(std::string_view name) const {
  auto it = tables_.find(name);
  if (it == tables_.end()) throw StatementError(fmt::format("no table {}", name));
  return it->second;
}

const TableDef& SegmentStore::table(std::string_view name) const { return get(name).def; }

std::vector<std::string> SegmentStore::table_names() const {
  std::vector<std::string> out;
  for (const auto& [name, t] : tables_) out.push_back(name);
  return out;
}

std::size_t SegmentStore::insert(std::string_view table, const Row& values, LocalXid xmin, CommandId cmin) {
  Table& t = get(table);
  t.heap.push_back(TupleVersion{Ctid{t.next_ctid++}, values, VersionHeader{xmin, cmin, std::nullopt, {}}});
  t.by_key[values[t.def.key_index()]].push_back(t.heap.size() - 1);
  return t.heap.size() - 1;
}

void SegmentStore::stamp_xmax(std::string_view table, std::size_t index, LocalXid xmax, CommandId cmax) {
  Table& t = get(table);
  TupleVersion& v = t.heap.at(index);
  v.header.xmax = xmax;
  v.header.cmax = cmax;
}

std::size_t SegmentStore::add_successor(std::string_view table, std::size_t index, const Row& values,
                                        LocalXid xmin, CommandId cmin) {
  Table& t = get(table);
  const Ctid ctid = t.heap.at(index).ctid;
  t.heap.push_back(TupleVersion{ctid, values, VersionHeader{xmin, cmin, std::nullopt, {}}});
  t.by_key[values[t.def.key_index()]].push_back(t.heap.size() - 1);
  return t.heap.size() - 1;
}

const std::vector<TupleVersion>& SegmentStore::heap(std::string_view table) const { return get(table).heap; }

std::vector<std::size_t> SegmentStore::visible_versions(std::string_view table, const SelfView& self,
                                                        const SegmentXidMap& xids) const {
  const Table& t = get(table);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < t.heap.size(); ++i) {
    if (visible(t.heap[i].header, self, xids)) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> SegmentStore::visible_versions(std::string_view table, const std::set<std::int64_t>& keys,
                                                       const SelfView& self, const SegmentXidMap& xids) const {
  const Table& t = get(table);
  std::vector<std::size_t> out;
  for (std::int64_t k : keys) {
    auto it = t.by_key.find(k);
    if (it == t.by_key.end()) continue;
    for (std::size_t i : it->second) {
      if (visible(t.heap[i].header, self, xids)) out.push_back(i);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<Row> SegmentStore::scan(std::string_view table, const SelfView& self,
                                    const SegmentXidMap& xids) const {
  const Table& t = get(table);
  std::vector<Row> out;
  for (std::size_t i : visible_versions(table, self, xids)) out.push_back(t.heap[i].values);
  return out;
}

std::vector<Row> SegmentStore::committed_rows(std::string_view table, const SegmentXidMap& xids) const {
  auto committed = [&](LocalXid x) { return xids.status(x) == LocalStatus::Committed; };
  std::vector<Row> out;
  for (const auto& v : get(table).heap) {
    if (committed(v.header.xmin) && !(v.header.xmax && committed(*v.header.xmax))) out.push_back(v.values);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::optional<std::string> SegmentStore::check_chains(const SegmentXidMap& xids) const {
  for (const auto& [name, t] : tables_) {
    std::map<Ctid, std::size_t> live_tip;  // ctid -> heap index of the current non-aborted tip
    for (std::size_t i = 0; i < t.heap.size(); ++i) {
      const TupleVersion& v = t.heap[i];
      if (xids.status(v.header.xmin) == LocalStatus::Aborted) continue;
      auto it = live_tip.find(v.ctid);
      if (it != live_tip.end()) {
        const TupleVersion& prev = t.heap[it->second];
        if (!prev.header.xmax || *prev.header.xmax != v.header.xmin) {
          return fmt::format("{} {}: ctid {} has a successor not created by the deleter of its predecessor",
                             to_string(segment_), name, to_underlying(v.ctid));
        }
      }
      live_tip[v.ctid] = i;
    }
  }
  return std::nullopt;
}

LockMode relation_lock_mode(const Statement& st, bool legacy_locking) {
  switch (st.kind) {
    case StatementKind::Update:
    case StatementKind::Delete:
      return legacy_locking ? LockMode::Exclusive : LockMode::RowExclusive;
    case StatementKind::Insert:
      return LockMode::RowExclusive;
    case StatementKind::Select:
      return LockMode::AccessShare;
    case StatementKind::Lock:
      return st.lock_mode;
    default:
      throw ProtocolError(fmt::format("{} takes no relation lock", to_string(st.kind)));
  }
}

SegmentExecution::SegmentExecution(Statement st, std::vector<Row> rows, bool relation_only)
    : st_(std::move(st)), insert_rows_(std::move(rows)), relation_only_(relation_only) {}

ExecResult SegmentExecution::run(const ExecContext& ctx) {
  promoted_.clear();
  ExecResult blocked{ExecStatus::Blocked, 0, {}, {}, std::nullopt, {}};
  if (auto w = ctx.locks->waiting_request(ctx.txn)) {
    blocked.waiting_on = w->tag;
    return blocked;
  }
  auto finish = [&](ExecResult r) {
    r.promoted = std::move(promoted_);
    return r;
  };
  const SelfView self{ctx.xid, ctx.command, ctx.snapshot, ctx.local_snapshot};
  const SegmentId seg = ctx.locks->segment();

  // Acquire `tag` unless it was already requested; true when held.
  auto obtain = [&](const LockTag& tag, LockMode mode) {
    const bool promoted = requested_ == tag;
    requested_.reset();
    if (promoted) return true;
    const AcquireResult r = ctx.locks->acquire(ctx.txn, tag, mode, ctx.now);
    if (r.outcome == AcquireOutcome::Granted) return true;
    requested_ = tag;
    blocked.waiting_on = tag;
    blocked.count = count_;
    return false;
  };

  while (true) {
    switch (phase_) {
      case Phase::RelationLock: {
        const LockTag tag = LockTag::relation_lock(seg, st_.table);
        if (!obtain(tag, relation_lock_mode(st_, ctx.legacy_locking))) return finish(blocked);
        phase_ = relation_only_ || st_.kind == StatementKind::Lock ? Phase::Done : Phase::Scan;
        break;
      }
      case Phase::Scan: {
        SegmentStore& store = *ctx.store;
        const TableDef& def = store.table(st_.table);
        if (st_.kind == StatementKind::Insert) {
          for (const Row& r : insert_rows_) store.insert(st_.table, r, ctx.xid, ctx.command);
          count_ = insert_rows_.size();
          wrote_ = count_ > 0;
          phase_ = Phase::Done;
          break;
        }
        std::vector<std::size_t> hits;
        const auto keys = pinned_keys(st_.where, def);
        const auto candidates = keys ? store.visible_versions(st_.table, *keys, self, *ctx.xids)
                                     : store.visible_versions(st_.table, self, *ctx.xids);
        for (std::size_t i : candidates) {
          if (matches(st_.where, def, store.heap(st_.table)[i].values)) hits.push_back(i);
        }
        if (st_.kind == StatementKind::Select) {
          ExecResult done{ExecStatus::Done, hits.size(), {}, {}, std::nullopt, {}};
          for (std::size_t i : hits) done.rows.push_back(store.heap(st_.table)[i].values);
          phase_ = Phase::Done;
          return finish(std::move(done));
        }
        targets_ = std::move(hits);
        cursor_ = 0;
        phase_ = targets_.empty() ? Phase::Done : Phase::TupleLock;
        break;
      }
      case Phase::TupleLock: {
        const TupleVersion& v = ctx.store->heap(st_.table)[targets_[cursor_]];
        if (!obtain(LockTag::tuple_lock(seg, st_.table, v.ctid), LockMode::Exclusive)) return finish(blocked);
        phase_ = Phase::TupleCheck;
        break;
      }
      case Phase::TupleCheck: {
        const TupleVersion& v = ctx.store->heap(st_.table)[targets_[cursor_]];
        if (v.header.xmax && *v.header.xmax != ctx.xid) {
          const LocalXid writer = *v.header.xmax;
          const LocalStatus s = ctx.xids->status(writer);
          if (s == LocalStatus::InProgress) {
            // Wait for the writer to finish while keeping the tuple lock.
            if (!obtain(LockTag::transaction_lock(seg, writer), LockMode::Share)) return finish(blocked);
            break;  // re-examine the writer's outcome
          }
          if (s == LocalStatus::Committed) {
            return finish(ExecResult{ExecStatus::Failed, count_, {},
                                     "could not serialize access due to concurrent update", std::nullopt, {}});
          }
        }
        phase_ = Phase::Apply;
        break;
      }
      case Phase::Apply: {
        SegmentStore& store = *ctx.store;
        const std::size_t idx = targets_[cursor_];
        const Row values = store.heap(st_.table)[idx].values;
        const Ctid ctid = store.heap(st_.table)[idx].ctid;
        store.stamp_xmax(st_.table, idx, ctx.xid, ctx.command);
        if (st_.kind == StatementKind::Update) {
          store.add_successor(st_.table, idx, apply_assignments(st_.set, store.table(st_.table), values), ctx.xid,
                              ctx.command);
        }
        ++count_;
        wrote_ = true;
        auto granted = ctx.locks->release_tuple_lock(ctx.txn, LockTag::tuple_lock(seg, st_.table, ctid));
        promoted_.insert(promoted_.end(), granted.begin(), granted.end());
        ++cursor_;
        phase_ = cursor_ < targets_.size() ? Phase::TupleLock : Phase::Done;
        break;
      }
      case Phase::Done:
        return finish(ExecResult{ExecStatus::Done, count_, {}, {}, std::nullopt, {}});
    }
  }
}

}  // namespace htapsim
