#include "htapsim/statement.hpp"

#include <cctype>
#include <charconv>

#include <fmt/format.h>

namespace htapsim {

std::string_view to_string(StatementKind k) noexcept {
  switch (k) {
    case StatementKind::Begin: return "begin";
    case StatementKind::Commit: return "commit";
    case StatementKind::Abort: return "abort";
    case StatementKind::Update: return "update";
    case StatementKind::Delete: return "delete";
    case StatementKind::Insert: return "insert";
    case StatementKind::Select: return "select";
    case StatementKind::Lock: return "lock";
  }
  return "?";
}

namespace {

struct Token {
  enum class Kind : std::uint8_t { Word, Number, Punct, End } kind = Kind::End;
  std::string text;  // lower-cased for words
  std::int64_t number = 0;
};

std::vector<Token> tokenize(std::string_view s) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    if (std::isspace(static_cast<unsigned char>(c)) || c == ';') {
      ++i;
    } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i;
      while (j < s.size() && (std::isalnum(static_cast<unsigned char>(s[j])) || s[j] == '_')) ++j;
      std::string w(s.substr(i, j - i));
      for (char& ch : w) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
      out.push_back({Token::Kind::Word, std::move(w), 0});
      i = j;
    } else if (std::isdigit(static_cast<unsigned char>(c)) ||
               (c == '-' && i + 1 < s.size() && std::isdigit(static_cast<unsigned char>(s[i + 1])))) {
      std::size_t j = i + 1;
      while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
      Token t{Token::Kind::Number, std::string(s.substr(i, j - i)), 0};
      auto [ptr, ec] = std::from_chars(s.data() + i, s.data() + j, t.number);
      if (ec != std::errc{}) throw StatementError(fmt::format("number out of range: {}", t.text));
      out.push_back(std::move(t));
      i = j;
    } else if (std::string_view("(),=+*").find(c) != std::string_view::npos) {
      out.push_back({Token::Kind::Punct, std::string(1, c), 0});
      ++i;
    } else {
      throw StatementError(fmt::format("unexpected character '{}'", c));
    }
  }
  out.push_back({Token::Kind::End, "", 0});
  return out;
}

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text), toks_(tokenize(text)) {}

  Statement parse() {
    Statement st;
    st.text = std::string(text_);
    const std::string head = word("a statement");
    if (head == "begin" || head == "commit" || head == "abort" || head == "rollback") {
      st.kind = head == "begin" ? StatementKind::Begin
                : head == "commit" ? StatementKind::Commit
                                   : StatementKind::Abort;
      accept_word(head == "begin" ? "transaction" : "work");
    } else if (head == "update") {
      st.kind = StatementKind::Update;
      st.table = word("a table name");
      expect_word("set");
      do {
        st.set.push_back(assignment());
      } while (accept_punct(","));
      st.where = optional_where();
    } else if (head == "delete") {
      st.kind = StatementKind::Delete;
      expect_word("from");
      st.table = word("a table name");
      st.where = optional_where();
    } else if (head == "insert") {
      st.kind = StatementKind::Insert;
      expect_word("into");
      st.table = word("a table name");
      insert_source(st);
    } else if (head == "select") {
      st.kind = StatementKind::Select;
      expect_punct("*");
      expect_word("from");
      st.table = word("a table name");
      st.where = optional_where();
    } else if (head == "lock") {
      st.kind = StatementKind::Lock;
      accept_word("table");
      st.table = word("a table name");
      if (accept_word("in")) {
        std::string mode;
        while (peek().kind == Token::Kind::Word && peek().text != "mode") mode += next().text + " ";
        expect_word("mode");
        auto m = parse_lock_mode(mode);
        if (!m) throw StatementError(fmt::format("unknown lock mode '{}'", mode));
        st.lock_mode = *m;
      }
    } else {
      throw StatementError(fmt::format("unknown statement '{}'", head));
    }
    if (peek().kind != Token::Kind::End) {
      throw StatementError(fmt::format("unexpected '{}' after statement", peek().text));
    }
    return st;
  }

 private:
  const Token& peek() const { return toks_[pos_]; }
  const Token& next() {
    const Token& t = toks_[pos_];
    if (t.kind != Token::Kind::End) ++pos_;
    return t;
  }

  std::string word(std::string_view what) {
    const Token& t = next();
    if (t.kind != Token::Kind::Word) throw StatementError(fmt::format("expected {}, got '{}'", what, t.text));
    return t.text;
  }
  std::int64_t number() {
    const Token& t = next();
    if (t.kind != Token::Kind::Number) throw StatementError(fmt::format("expected a number, got '{}'", t.text));
    return t.number;
  }
  bool accept_word(std::string_view w) {
    if (peek().kind == Token::Kind::Word && peek().text == w) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect_word(std::string_view w) {
    if (!accept_word(w)) throw StatementError(fmt::format("expected '{}', got '{}'", w, peek().text));
  }
  bool accept_punct(std::string_view p) {
    if (peek().kind == Token::Kind::Punct && peek().text == p) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect_punct(std::string_view p) {
    if (!accept_punct(p)) throw StatementError(fmt::format("expected '{}', got '{}'", p, peek().text));
  }

  Assignment assignment() {
    Assignment a;
    a.column = word("a column name");
    expect_punct("=");
    if (peek().kind == Token::Kind::Number) {
      a.value = number();
      return a;
    }
    const std::string ref = word("a column or number");
    if (ref != a.column) throw StatementError(fmt::format("only {0} = {0} + n is supported", a.column));
    expect_punct("+");
    a.increment = true;
    a.value = number();
    return a;
  }

  Predicate optional_where() {
    Predicate p;
    if (!accept_word("where")) return p;
    do {
      std::vector<Equality> conj;
      do {
        Equality e;
        e.column = word("a column name");
        expect_punct("=");
        e.value = number();
        conj.push_back(std::move(e));
      } while (accept_word("and"));
      p.disjuncts.push_back(std::move(conj));
    } while (accept_word("or"));
    return p;
  }

  void insert_source(Statement& st) {
    if (accept_word("values")) {
      do {
        expect_punct("(");
        std::vector<std::int64_t> row;
        do {
          row.push_back(number());
        } while (accept_punct(","));
        expect_punct(")");
        if (row.size() != 2) throw StatementError("a row has two values");
        st.rows.push_back(std::move(row));
      } while (accept_punct(","));
      return;
    }
    expect_word("select");
    const std::int64_t first = number();
    expect_punct(",");
    expect_word("generate_series");
    expect_punct("(");
    const std::int64_t lo = number();
    expect_punct(",");
    const std::int64_t hi = number();
    expect_punct(")");
    if (hi < lo) throw StatementError("generate_series upper bound is below the lower bound");
    for (std::int64_t v = lo; v <= hi; ++v) st.rows.push_back({first, v});
  }

  std::string_view text_;
  std::vector<Token> toks_;
  std::size_t pos_ = 0;
};

}  // namespace

Statement parse_statement(std::string_view text) { return Parser(text).parse(); }

}  // namespace htapsim
