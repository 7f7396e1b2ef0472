#pragma once

// The scenario statement micro-grammar:
//
//   begin | commit | abort | rollback
//   update <t> set <col> = <col> + <n> [, ...] [where <pred>]
//   update <t> set <col> = <n> [where <pred>]
//   delete from <t> [where <pred>]
//   insert into <t> values (<n>, <n>) [, (...)]
//   insert into <t> select <n>, generate_series(<lo>, <hi>)
//   select * from <t> [where <pred>]
//   lock [table] <t> [in <mode> mode]
//
// Predicates are disjunctions of conjunctions of column equalities, e.g.
// "c1 = 1 and c2 = 3 or c1 = 4".

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "htapsim/lock_manager.hpp"

namespace htapsim {

enum class StatementKind : std::uint8_t { Begin, Commit, Abort, Update, Delete, Insert, Select, Lock };

std::string_view to_string(StatementKind k) noexcept;

struct Equality {
  std::string column;
  std::int64_t value = 0;
};

struct Predicate {
  /// Empty means "true".
  std::vector<std::vector<Equality>> disjuncts;

  bool always_true() const noexcept { return disjuncts.empty(); }
};

struct Assignment {
  std::string column;
  bool increment = false;  // col = col + value when true, col = value otherwise
  std::int64_t value = 0;
};

struct Statement {
  StatementKind kind = StatementKind::Begin;
  std::string table;
  Predicate where;
  std::vector<Assignment> set;
  std::vector<std::vector<std::int64_t>> rows;
  LockMode lock_mode = LockMode::AccessExclusive;
  std::string text;

  bool is_dml() const noexcept {
    return kind == StatementKind::Update || kind == StatementKind::Delete || kind == StatementKind::Insert;
  }
};

class StatementError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Statement parse_statement(std::string_view text);

}  // namespace htapsim
