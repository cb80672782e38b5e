#pragma once

#include <cctype>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "amarl/core.hpp"

namespace amarl {

enum class FKind { True, False, Atom, And, Not, PBound, RBound };
enum class PathKind { Next, Until, BoundedUntil };
enum class RPathKind { Reach, Cumulative, Instant };
enum class Cmp { LT, LE, GT, GE, Query };

/// One PCTL state formula. P nodes carry a path formula (next / until /
/// bounded until, with F as sugar for true U), R nodes one of the reward
/// forms (reach / cumulative / instant).
struct Formula {
  FKind kind = FKind::True;
  std::string atom;
  std::shared_ptr<const Formula> lhs, rhs;  // And children; Not uses lhs

  Cmp cmp = Cmp::Query;
  double bound = 0.0;
  PathKind path = PathKind::Until;
  RPathKind rpath = RPathKind::Reach;
  std::shared_ptr<const Formula> p1, p2;  // path operands (p2 for until right)
  int step_bound = 0;
};

using FormulaPtr = std::shared_ptr<const Formula>;

/// True iff the formula stays inside the weak fragment: no next and no
/// bounded-until anywhere.
inline bool weak(const Formula& f) {
  switch (f.kind) {
    case FKind::True:
    case FKind::False:
    case FKind::Atom:
      return true;
    case FKind::And:
      return weak(*f.lhs) && weak(*f.rhs);
    case FKind::Not:
      return weak(*f.lhs);
    case FKind::PBound:
      if (f.path != PathKind::Until) return false;
      return weak(*f.p1) && weak(*f.p2);
    case FKind::RBound:
      return f.rpath != RPathKind::Reach ? true : weak(*f.p1);
  }
  return false;
}

inline std::string cmp_text(Cmp c) {
  switch (c) {
    case Cmp::LT: return "<";
    case Cmp::LE: return "<=";
    case Cmp::GT: return ">";
    case Cmp::GE: return ">=";
    case Cmp::Query: return "=?";
  }
  return "";
}

inline std::string to_string(const Formula& f);

namespace detail {

inline std::string number_text(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

inline std::string path_text(const Formula& f) {
  const bool is_f = f.p1->kind == FKind::True && f.path != PathKind::Next;
  std::string suffix =
      f.path == PathKind::BoundedUntil ? "<=" + std::to_string(f.step_bound) : "";
  if (f.path == PathKind::Next) return "X " + to_string(*f.p1);
  if (is_f && suffix.empty()) return "F " + to_string(*f.p2);
  return to_string(*f.p1) + " U" + suffix + " " + to_string(*f.p2);
}

}  // namespace detail

inline std::string to_string(const Formula& f) {
  switch (f.kind) {
    case FKind::True: return "true";
    case FKind::False: return "false";
    case FKind::Atom: return f.atom;
    case FKind::And: return "(" + to_string(*f.lhs) + " & " + to_string(*f.rhs) + ")";
    case FKind::Not: return "!" + to_string(*f.lhs);
    case FKind::PBound: {
      std::string b = f.cmp == Cmp::Query ? "=?" : cmp_text(f.cmp) + detail::number_text(f.bound);
      return "P" + b + " [ " + detail::path_text(f) + " ]";
    }
    case FKind::RBound: {
      std::string b = f.cmp == Cmp::Query ? "=?" : cmp_text(f.cmp) + detail::number_text(f.bound);
      std::string body;
      switch (f.rpath) {
        case RPathKind::Reach: body = "F " + to_string(*f.p1); break;
        case RPathKind::Cumulative: body = "C<=" + std::to_string(f.step_bound); break;
        case RPathKind::Instant: body = "I=" + std::to_string(f.step_bound); break;
      }
      return "R" + b + " [ " + body + " ]";
    }
  }
  return "";
}

namespace detail {

struct Token {
  enum Type { Ident, Number, Punct, End } type = End;
  std::string text;
  double value = 0.0;
};

/// Tokenizer. Identifiers may embed one '=' when the right-hand side starts
/// with a letter or underscore (labels like area_1=HallA); 'I=5' and '=?'
/// stay separate tokens.
class Lexer {
 public:
  explicit Lexer(const std::string& src) : src_(src) { advance(); }
  const Token& peek() const { return tok_; }
  Token take() {
    Token t = tok_;
    advance();
    return t;
  }

 private:
  void advance() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_])))
      ++pos_;
    if (pos_ >= src_.size()) {
      tok_ = {Token::End, "", 0.0};
      return;
    }
    const char c = src_[pos_];
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t start = pos_;
      while (pos_ < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[pos_])) ||
                                    src_[pos_] == '_'))
        ++pos_;
      if (pos_ + 1 < src_.size() && src_[pos_] == '=' &&
          (std::isalpha(static_cast<unsigned char>(src_[pos_ + 1])) ||
           src_[pos_ + 1] == '_')) {
        ++pos_;
        while (pos_ < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[pos_])) ||
                                      src_[pos_] == '_'))
          ++pos_;
      }
      tok_ = {Token::Ident, src_.substr(start, pos_ - start), 0.0};
      return;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      std::size_t start = pos_;
      while (pos_ < src_.size() && (std::isdigit(static_cast<unsigned char>(src_[pos_])) ||
                                    src_[pos_] == '.'))
        ++pos_;
      Token t{Token::Number, src_.substr(start, pos_ - start), 0.0};
      try {
        t.value = std::stod(t.text);
      } catch (const std::exception&) {
        throw ParseError("bad number '" + t.text + "' in formula");
      }
      tok_ = t;
      return;
    }
    auto two = [&](const char* s) {
      if (pos_ + 1 < src_.size() && src_[pos_] == s[0] && src_[pos_ + 1] == s[1]) {
        tok_ = {Token::Punct, s, 0.0};
        pos_ += 2;
        return true;
      }
      return false;
    };
    if (two("<=") || two(">=") || two("=?")) return;
    if (std::string("()[]&!<>=").find(c) != std::string::npos) {
      tok_ = {Token::Punct, std::string(1, c), 0.0};
      ++pos_;
      return;
    }
    throw ParseError(std::string("unexpected character '") + c + "' in formula");
  }

  const std::string& src_;
  std::size_t pos_ = 0;
  Token tok_;
};

class Parser {
 public:
  explicit Parser(const std::string& src) : lex_(src) {}

  FormulaPtr parse() {
    FormulaPtr f = state();
    if (lex_.peek().type != Token::End)
      throw ParseError("trailing input after formula: '" + lex_.peek().text + "'");
    return f;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) {
    throw ParseError(msg + (lex_.peek().type == Token::End
                                ? " at end of formula"
                                : " near '" + lex_.peek().text + "'"));
  }
  void expect(const std::string& p) {
    if (lex_.peek().type != Token::Punct || lex_.peek().text != p)
      fail("expected '" + p + "'");
    lex_.take();
  }
  bool accept(const std::string& p) {
    if (lex_.peek().type == Token::Punct && lex_.peek().text == p) {
      lex_.take();
      return true;
    }
    return false;
  }

  FormulaPtr state() {
    FormulaPtr f = unary();
    while (accept("&")) {
      auto n = std::make_shared<Formula>();
      n->kind = FKind::And;
      n->lhs = f;
      n->rhs = unary();
      f = n;
    }
    return f;
  }

  FormulaPtr unary() {
    if (accept("!")) {
      auto n = std::make_shared<Formula>();
      n->kind = FKind::Not;
      n->lhs = unary();
      return n;
    }
    if (accept("(")) {
      FormulaPtr f = state();
      expect(")");
      return f;
    }
    const Token t = lex_.peek();
    if (t.type != Token::Ident) fail("expected a state formula");
    if (t.text == "true" || t.text == "false") {
      lex_.take();
      auto n = std::make_shared<Formula>();
      n->kind = t.text == "true" ? FKind::True : FKind::False;
      return n;
    }
    if (t.text == "P") return pbound();
    if (t.text == "R") return rbound();
    lex_.take();
    auto n = std::make_shared<Formula>();
    n->kind = FKind::Atom;
    n->atom = t.text;
    return n;
  }

  std::pair<Cmp, double> bound() {
    if (accept("=?")) return {Cmp::Query, 0.0};
    Cmp c;
    if (accept("<="))
      c = Cmp::LE;
    else if (accept(">="))
      c = Cmp::GE;
    else if (accept("<"))
      c = Cmp::LT;
    else if (accept(">"))
      c = Cmp::GT;
    else
      fail("expected a probability/reward bound");
    if (lex_.peek().type != Token::Number) fail("expected a bound value");
    return {c, lex_.take().value};
  }

  int step() {
    if (lex_.peek().type != Token::Number) fail("expected a step bound");
    const Token t = lex_.take();
    if (t.text.find('.') != std::string::npos || t.value < 0)
      fail("step bound must be a nonnegative integer");
    return static_cast<int>(t.value);
  }

  FormulaPtr pbound() {
    lex_.take();  // P
    auto n = std::make_shared<Formula>();
    n->kind = FKind::PBound;
    std::tie(n->cmp, n->bound) = bound();
    expect("[");
    if (lex_.peek().type == Token::Ident && lex_.peek().text == "X") {
      lex_.take();
      n->path = PathKind::Next;
      n->p1 = state();
    } else if (lex_.peek().type == Token::Ident && lex_.peek().text == "F") {
      lex_.take();
      auto t = std::make_shared<Formula>();
      t->kind = FKind::True;
      n->path = PathKind::Until;
      n->p1 = t;
      n->p2 = state();
    } else {
      n->p1 = state();
      if (lex_.peek().type != Token::Ident || lex_.peek().text != "U")
        fail("expected 'U' in path formula");
      lex_.take();
      n->path = PathKind::Until;
      if (accept("<=")) {
        n->path = PathKind::BoundedUntil;
        n->step_bound = step();
      }
      n->p2 = state();
    }
    expect("]");
    return n;
  }

  FormulaPtr rbound() {
    lex_.take();  // R
    auto n = std::make_shared<Formula>();
    n->kind = FKind::RBound;
    std::tie(n->cmp, n->bound) = bound();
    expect("[");
    if (lex_.peek().type == Token::Ident && lex_.peek().text == "F") {
      lex_.take();
      n->rpath = RPathKind::Reach;
      n->p1 = state();
    } else if (lex_.peek().type == Token::Ident && lex_.peek().text == "C") {
      lex_.take();
      expect("<=");
      n->rpath = RPathKind::Cumulative;
      n->step_bound = step();
    } else if (lex_.peek().type == Token::Ident && lex_.peek().text == "I") {
      lex_.take();
      expect("=");
      n->rpath = RPathKind::Instant;
      n->step_bound = step();
    } else {
      fail("expected 'F', 'C<=k' or 'I=k' in reward formula");
    }
    expect("]");
    return n;
  }

  Lexer lex_;
};

}  // namespace detail

/// Parses one PCTL formula in the textual syntax used by property files,
/// e.g. "P<0.15 [ F captured_all ]" or "R>=7 [ F end_all ]".
inline FormulaPtr parse_formula(const std::string& text) {
  detail::Parser p(text);
  return p.parse();
}

}  // namespace amarl
