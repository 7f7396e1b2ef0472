#include "htapsim/lock_manager.hpp"

#include <algorithm>
#include <cctype>

#include <fmt/format.h>

namespace htapsim {
namespace {

// Bit (level-1) set iff the row's mode conflicts with that level.
constexpr std::array<std::uint8_t, 8> kConflictBits = [] {
  constexpr auto bits = [](std::initializer_list<int> levels) {
    std::uint8_t b = 0;
    for (int l : levels) b |= static_cast<std::uint8_t>(1u << (l - 1));
    return b;
  };
  return std::array<std::uint8_t, 8>{
      bits({8}),
      bits({7, 8}),
      bits({5, 6, 7, 8}),
      bits({4, 5, 6, 7, 8}),
      bits({3, 4, 6, 7, 8}),
      bits({3, 4, 5, 6, 7, 8}),
      bits({2, 3, 4, 5, 6, 7, 8}),
      bits({1, 2, 3, 4, 5, 6, 7, 8}),
  };
}();

std::string normalize(std::string_view text) {
  std::string out;
  for (char c : text) {
    if (c == ' ' || c == '_' || c == '-') continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  if (out.size() > 4 && out.ends_with("lock")) out.resize(out.size() - 4);
  return out;
}

bool is_waiting(const LockRequest& r) { return r.status == LockStatus::Waiting; }

}  // namespace

LockMode lock_mode_from_level(int lvl) {
  if (lvl < 1 || lvl > 8) throw ProtocolError(fmt::format("lock level {} out of range 1..8", lvl));
  return static_cast<LockMode>(lvl);
}

std::string_view to_string(LockMode m) noexcept {
  switch (m) {
    case LockMode::AccessShare: return "AccessShare";
    case LockMode::RowShare: return "RowShare";
    case LockMode::RowExclusive: return "RowExclusive";
    case LockMode::ShareUpdateExclusive: return "ShareUpdateExclusive";
    case LockMode::Share: return "Share";
    case LockMode::ShareRowExclusive: return "ShareRowExclusive";
    case LockMode::Exclusive: return "Exclusive";
    case LockMode::AccessExclusive: return "AccessExclusive";
  }
  return "?";
}

std::optional<LockMode> parse_lock_mode(std::string_view text) {
  const std::string key = normalize(text);
  if (key.size() == 1 && key[0] >= '1' && key[0] <= '8') return static_cast<LockMode>(key[0] - '0');
  for (LockMode m : kAllLockModes) {
    if (normalize(to_string(m)) == key) return m;
  }
  return std::nullopt;
}

bool conflicts(LockMode a, LockMode b) noexcept {
  const int la = level(a);
  const int lb = level(b);
  if (la < 1 || la > 8 || lb < 1 || lb > 8) return false;
  return (kConflictBits[la - 1] >> (lb - 1)) & 1u;
}

std::string_view to_string(LockTagKind k) noexcept {
  switch (k) {
    case LockTagKind::Relation: return "relation";
    case LockTagKind::Tuple: return "tuple";
    case LockTagKind::Transaction: return "transaction";
  }
  return "?";
}

LockTag LockTag::relation_lock(SegmentId segment, std::string relation) {
  return LockTag{LockTagKind::Relation, segment, std::move(relation), 0};
}

LockTag LockTag::tuple_lock(SegmentId segment, std::string relation, Ctid ctid) {
  return LockTag{LockTagKind::Tuple, segment, std::move(relation), to_underlying(ctid)};
}

LockTag LockTag::transaction_lock(SegmentId segment, LocalXid xid) {
  return LockTag{LockTagKind::Transaction, segment, {}, to_underlying(xid)};
}

std::string LockTag::describe() const {
  switch (kind) {
    case LockTagKind::Relation: return fmt::format("relation({})", relation);
    case LockTagKind::Tuple: return fmt::format("tuple({},{})", relation, object);
    case LockTagKind::Transaction: return fmt::format("transaction({})", object);
  }
  return "?";
}

LockTable::LockTable(SegmentId segment) : segment_(segment) {}

void LockTable::register_txn(Dxid txn, std::optional<LocalXid> local_xid) {
  auto [it, inserted] = txns_.try_emplace(txn);
  if (!local_xid) return;
  if (it->second.local_xid) {
    if (*it->second.local_xid != *local_xid) {
      throw ProtocolError(fmt::format("txn {} already owns local xid {} on {}", to_string(txn),
                                      to_string(*it->second.local_xid), to_string(segment_)));
    }
    return;
  }
  if (owners_.contains(*local_xid)) {
    throw ProtocolError(fmt::format("local xid {} already owned on {}", to_string(*local_xid),
                                    to_string(segment_)));
  }
  (void)inserted;
  it->second.local_xid = local_xid;
  owners_.emplace(*local_xid, txn);
  const LockTag tag = LockTag::transaction_lock(segment_, *local_xid);
  Queue& q = queues_[tag];
  q.insert(q.begin(), LockRequest{txn, tag, LockMode::Exclusive, LockStatus::Granted, 0});
  it->second.tags.insert(tag);
}

bool LockTable::is_registered(Dxid txn) const { return txns_.contains(txn); }

bool LockTable::is_owner(Dxid txn, const LockTag& tag) const {
  if (tag.kind != LockTagKind::Transaction) return false;
  auto it = owners_.find(LocalXid{tag.object});
  return it != owners_.end() && it->second == txn;
}

std::vector<Dxid> LockTable::blockers_for(const Queue& queue, std::size_t position, Dxid txn,
                                          LockMode mode) const {
  std::vector<Dxid> out;
  auto add = [&](Dxid d) {
    if (std::find(out.begin(), out.end(), d) == out.end()) out.push_back(d);
  };
  for (const LockRequest& r : queue) {
    if (r.status == LockStatus::Granted && r.txn != txn && conflicts(r.mode, mode)) add(r.txn);
  }
  for (std::size_t i = 0; i < queue.size() && i < position; ++i) {
    const LockRequest& r = queue[i];
    if (is_waiting(r) && r.txn != txn && conflicts(r.mode, mode)) add(r.txn);
  }
  return out;
}

AcquireResult LockTable::acquire(Dxid txn, const LockTag& tag, LockMode mode, Tick now) {
  auto tx = txns_.find(txn);
  if (tx == txns_.end()) {
    throw ProtocolError(fmt::format("txn {} is not active on {}", to_string(txn), to_string(segment_)));
  }
  if (tag.segment != segment_) {
    throw ProtocolError(fmt::format("tag {} belongs to {}, not {}", tag.describe(),
                                    to_string(tag.segment), to_string(segment_)));
  }
  if (waiting_request(txn)) {
    throw ProtocolError(fmt::format("txn {} already has a waiting request on {}", to_string(txn),
                                    to_string(segment_)));
  }

  if (tag.kind == LockTagKind::Transaction && is_owner(txn, tag)) return {};

  auto qit = queues_.find(tag);
  if (qit != queues_.end()) {
    for (const LockRequest& r : qit->second) {
      if (r.txn == txn && r.mode == mode && r.status == LockStatus::Granted) return {};
    }
  }

  const Queue empty;
  const Queue& current = qit == queues_.end() ? empty : qit->second;
  std::vector<Dxid> blockers = blockers_for(current, current.size(), txn, mode);
  if (blockers.empty()) {
    // Waits on a transaction tag are satisfied without retaining anything.
    if (tag.kind == LockTagKind::Transaction) return {};
    Queue& q = queues_[tag];
    auto first_waiter = std::find_if(q.begin(), q.end(), is_waiting);
    q.insert(first_waiter, LockRequest{txn, tag, mode, LockStatus::Granted, now});
    tx->second.tags.insert(tag);
    return {};
  }

  Queue& q = queues_[tag];
  q.push_back(LockRequest{txn, tag, mode, LockStatus::Waiting, now});
  tx->second.tags.insert(tag);
  return AcquireResult{AcquireOutcome::Blocked, blockers_for(q, q.size() - 1, txn, mode)};
}

std::vector<LockRequest> LockTable::regrant(const LockTag& tag) {
  std::vector<LockRequest> promoted;
  auto qit = queues_.find(tag);
  if (qit == queues_.end()) return promoted;
  Queue& q = qit->second;

  std::vector<LockRequest> granted;
  std::vector<LockRequest> waiting;
  for (LockRequest& r : q) (is_waiting(r) ? waiting : granted).push_back(r);

  std::vector<LockRequest> still_waiting;
  for (LockRequest& w : waiting) {
    bool blocked = false;
    for (const LockRequest& g : granted) {
      if (g.txn != w.txn && conflicts(g.mode, w.mode)) { blocked = true; break; }
    }
    if (!blocked) {
      for (const LockRequest& e : still_waiting) {
        if (e.txn != w.txn && conflicts(e.mode, w.mode)) { blocked = true; break; }
      }
    }
    if (blocked) {
      still_waiting.push_back(w);
      continue;
    }
    w.status = LockStatus::Granted;
    promoted.push_back(w);
    if (tag.kind == LockTagKind::Transaction) {
      auto tx = txns_.find(w.txn);
      if (tx != txns_.end()) tx->second.tags.erase(tag);
    } else {
      granted.push_back(w);
    }
  }
  q = std::move(granted);
  q.insert(q.end(), still_waiting.begin(), still_waiting.end());
  erase_if_empty(tag);
  return promoted;
}

void LockTable::erase_if_empty(const LockTag& tag) {
  auto it = queues_.find(tag);
  if (it != queues_.end() && it->second.empty()) queues_.erase(it);
}

std::vector<LockRequest> LockTable::release_all(Dxid txn) {
  std::vector<LockRequest> promoted;
  auto tx = txns_.find(txn);
  if (tx == txns_.end()) return promoted;
  const std::set<LockTag> tags = tx->second.tags;
  if (tx->second.local_xid) owners_.erase(*tx->second.local_xid);
  txns_.erase(tx);
  for (const LockTag& tag : tags) {
    auto qit = queues_.find(tag);
    if (qit == queues_.end()) continue;
    std::erase_if(qit->second, [&](const LockRequest& r) { return r.txn == txn; });
    auto more = regrant(tag);
    promoted.insert(promoted.end(), more.begin(), more.end());
  }
  return promoted;
}

std::vector<LockRequest> LockTable::release_tuple_lock(Dxid txn, const LockTag& tag) {
  if (tag.kind != LockTagKind::Tuple) {
    throw ProtocolError(fmt::format("{} is not a tuple lock; only tuple locks are released early",
                                    tag.describe()));
  }
  if (!holds(txn, tag)) {
    throw ProtocolError(fmt::format("txn {} does not hold {} on {}", to_string(txn), tag.describe(),
                                    to_string(segment_)));
  }
  Queue& q = queues_.at(tag);
  std::erase_if(q, [&](const LockRequest& r) { return r.txn == txn && r.status == LockStatus::Granted; });
  const bool still_there = std::any_of(q.begin(), q.end(), [&](const LockRequest& r) { return r.txn == txn; });
  if (!still_there) txns_.at(txn).tags.erase(tag);
  return regrant(tag);
}

std::vector<LockRequest> LockTable::held_by(Dxid txn) const {
  std::vector<LockRequest> out;
  auto tx = txns_.find(txn);
  if (tx == txns_.end()) return out;
  for (const LockTag& tag : tx->second.tags) {
    auto qit = queues_.find(tag);
    if (qit == queues_.end()) continue;
    for (const LockRequest& r : qit->second) {
      if (r.txn == txn && r.status == LockStatus::Granted) out.push_back(r);
    }
  }
  return out;
}

std::optional<LockRequest> LockTable::waiting_request(Dxid txn) const {
  auto tx = txns_.find(txn);
  if (tx == txns_.end()) return std::nullopt;
  for (const LockTag& tag : tx->second.tags) {
    auto qit = queues_.find(tag);
    if (qit == queues_.end()) continue;
    for (const LockRequest& r : qit->second) {
      if (r.txn == txn && is_waiting(r)) return r;
    }
  }
  return std::nullopt;
}

bool LockTable::holds(Dxid txn, const LockTag& tag, std::optional<LockMode> mode) const {
  auto qit = queues_.find(tag);
  if (qit == queues_.end()) return false;
  return std::any_of(qit->second.begin(), qit->second.end(), [&](const LockRequest& r) {
    return r.txn == txn && r.status == LockStatus::Granted && (!mode || r.mode == *mode);
  });
}

std::set<Dxid> LockTable::registered() const {
  std::set<Dxid> out;
  for (const auto& [d, _] : txns_) out.insert(d);
  return out;
}

std::optional<std::string> LockTable::check_invariants() const {
  for (const auto& [tag, q] : queues_) {
    bool seen_waiter = false;
    for (std::size_t i = 0; i < q.size(); ++i) {
      const LockRequest& r = q[i];
      if (r.tag != tag) return fmt::format("request filed under the wrong tag {}", tag.describe());
      if (is_waiting(r)) {
        seen_waiter = true;
        if (blockers_for(q, i, r.txn, r.mode).empty()) {
          return fmt::format("txn {} waits on {} without a conflicting blocker", to_string(r.txn),
                             tag.describe());
        }
        continue;
      }
      if (seen_waiter) return fmt::format("granted request behind a waiter on {}", tag.describe());
      for (std::size_t j = i + 1; j < q.size(); ++j) {
        const LockRequest& o = q[j];
        if (o.status == LockStatus::Granted && o.txn != r.txn && conflicts(r.mode, o.mode)) {
          return fmt::format("conflicting grants {}:{} and {}:{} on {}", to_string(r.txn),
                             to_string(r.mode), to_string(o.txn), to_string(o.mode), tag.describe());
        }
      }
    }
    if (tag.kind == LockTagKind::Transaction) {
      for (const LockRequest& r : q) {
        if (r.status == LockStatus::Granted && !is_owner(r.txn, tag)) {
          return fmt::format("txn {} holds foreign {}", to_string(r.txn), tag.describe());
        }
      }
    }
  }
  return std::nullopt;
}

}  // namespace htapsim
