#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "infoqm/errors.hpp"
#include "infoqm/fields.hpp"
#include "infoqm/lattice.hpp"
#include "infoqm/numfmt.hpp"
#include "infoqm/random.hpp"

namespace infoqm {

struct Rational {
  long num = 1;
  long den = 1;

  Rational() = default;
  Rational(long n, long d = 1) : num(n), den(d) {
    if (den == 0) throw InvalidArgument("rational with zero denominator");
    if (den < 0) num = -num, den = -den;
    const long g = std::gcd(num < 0 ? -num : num, den);
    if (g > 1) num /= g, den /= g;
  }
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool is_integer() const { return den == 1; }
  friend bool operator==(const Rational& a, const Rational& b) {
    return a.num == b.num && a.den == b.den;
  }
};

enum class Op { Number, Param, P, S, Coord, Add, Sub, Mul, Div, Neg, Pow, Log, GG, Lap, Dt };

struct ExprNode;

class Expr {
 public:
  Expr() = default;
  explicit Expr(std::shared_ptr<const ExprNode> n) : node_(std::move(n)) {}

  bool valid() const { return static_cast<bool>(node_); }
  const ExprNode& node() const { return *node_; }
  const std::shared_ptr<const ExprNode>& ptr() const { return node_; }
  inline Op op() const;
  inline const Expr& arg(std::size_t i) const;
  inline std::size_t arity() const;

  static inline Expr number(double v);
  static inline Expr param(std::string name);
  static inline Expr p();
  static inline Expr S();
  static inline Expr coord(std::size_t axis);

 private:
  std::shared_ptr<const ExprNode> node_;
};

struct ExprNode {
  Op op = Op::Number;
  double number = 0.0;
  std::string name;
  std::size_t axis = 0;
  Rational exponent{1, 1};
  std::vector<Expr> args;
};

inline Op Expr::op() const { return node_->op; }
inline const Expr& Expr::arg(std::size_t i) const { return node_->args.at(i); }
inline std::size_t Expr::arity() const { return node_->args.size(); }

namespace detail {
inline Expr make_node(Op op, std::vector<Expr> args = {}) {
  auto n = std::make_shared<ExprNode>();
  n->op = op;
  n->args = std::move(args);
  return Expr(std::move(n));
}
}  // namespace detail

inline Expr Expr::number(double v) {
  auto n = std::make_shared<ExprNode>();
  n->op = Op::Number;
  n->number = v;
  return Expr(std::move(n));
}
inline Expr Expr::param(std::string name) {
  auto n = std::make_shared<ExprNode>();
  n->op = Op::Param;
  n->name = std::move(name);
  return Expr(std::move(n));
}
inline Expr Expr::p() { return detail::make_node(Op::P); }
inline Expr Expr::S() { return detail::make_node(Op::S); }
inline Expr Expr::coord(std::size_t axis) {
  auto n = std::make_shared<ExprNode>();
  n->op = Op::Coord;
  n->axis = axis;
  return Expr(std::move(n));
}

namespace dsl {

inline Expr num(double v) { return Expr::number(v); }
inline Expr operator+(const Expr& a, const Expr& b) { return detail::make_node(Op::Add, {a, b}); }
inline Expr operator-(const Expr& a, const Expr& b) { return detail::make_node(Op::Sub, {a, b}); }
inline Expr operator*(const Expr& a, const Expr& b) { return detail::make_node(Op::Mul, {a, b}); }
inline Expr operator/(const Expr& a, const Expr& b) { return detail::make_node(Op::Div, {a, b}); }
inline Expr operator*(double c, const Expr& b) { return num(c) * b; }
inline Expr operator-(const Expr& a) {
  if (a.op() == Op::Number) return num(-a.node().number);
  return detail::make_node(Op::Neg, {a});
}
inline Expr pow(const Expr& base, Rational r) {
  auto n = std::make_shared<ExprNode>();
  n->op = Op::Pow;
  n->exponent = r;
  n->args = {base};
  return Expr(std::move(n));
}
inline Expr log(const Expr& a) { return detail::make_node(Op::Log, {a}); }
inline Expr gg(const Expr& a, const Expr& b) { return detail::make_node(Op::GG, {a, b}); }
inline Expr lap(const Expr& a) { return detail::make_node(Op::Lap, {a}); }
inline Expr dt(const Expr& a) { return detail::make_node(Op::Dt, {a}); }
inline Expr p() { return Expr::p(); }
inline Expr S() { return Expr::S(); }

}  // namespace dsl

inline bool operator==(const Expr& a, const Expr& b) {
  if (a.ptr() == b.ptr()) return true;
  if (!a.valid() || !b.valid()) return false;
  const ExprNode &x = a.node(), &y = b.node();
  if (x.op != y.op || x.args.size() != y.args.size()) return false;
  switch (x.op) {
    case Op::Number:
      if (x.number != y.number) return false;
      break;
    case Op::Param:
      if (x.name != y.name) return false;
      break;
    case Op::Coord:
      if (x.axis != y.axis) return false;
      break;
    case Op::Pow:
      if (!(x.exponent == y.exponent)) return false;
      break;
    default:
      break;
  }
  for (std::size_t i = 0; i < x.args.size(); ++i)
    if (!(x.args[i] == y.args[i])) return false;
  return true;
}
inline bool operator!=(const Expr& a, const Expr& b) { return !(a == b); }

// --- builtins ----------------------------------------------------------------

struct BuiltinInfo {
  std::string name;
  std::vector<std::string> params;
};

inline const std::vector<BuiltinInfo>& builtin_table() {
  static const std::vector<BuiltinInfo> t = {
      {"fisher", {}},          {"iq", {"a1", "a2"}},         {"h1", {"eta"}},
      {"h2", {"eta"}},         {"general", {"A", "B"}},      {"scaled_fisher", {"beta"}},
  };
  return t;
}

inline const BuiltinInfo* find_builtin(std::string_view name) {
  for (const auto& b : builtin_table())
    if (b.name == name) return &b;
  return nullptr;
}

inline Expr fisher_expr() {
  using namespace dsl;
  return gg(log(p()), log(p()));
}

// Expands a builtin with the given argument expressions; with no arguments the
// parameters stay symbolic under their default names.
inline Expr expand_builtin(std::string_view name, std::vector<Expr> args) {
  using namespace dsl;
  const BuiltinInfo* info = find_builtin(name);
  if (!info) throw InvalidArgument("unknown builtin '" + std::string(name) + "'");
  if (args.empty())
    for (const auto& pn : info->params) args.push_back(Expr::param(pn));
  if (args.size() != info->params.size())
    throw InvalidArgument("builtin '" + std::string(name) + "' expects " +
                          std::to_string(info->params.size()) + " arguments");
  const Expr L = log(p());
  if (name == "fisher") return gg(L, L);
  if (name == "iq") {
    Expr u = args[0] * L + args[1] * S();
    return gg(u, u);
  }
  if (name == "h1") {
    Expr u = L + args[0] * gg(L, L);
    return gg(u, u);
  }
  if (name == "h2") {
    Expr u = L + args[0] * dt(p()) / p();
    return gg(u, u);
  }
  if (name == "general") return args[0] * gg(L, L) + args[1] * lap(p()) / p();
  return args[0] * gg(L, L);  // scaled_fisher
}

inline Expr builtin(std::string_view name, const std::vector<double>& values) {
  std::vector<Expr> args;
  for (double v : values) args.push_back(Expr::number(v));
  return expand_builtin(name, std::move(args));
}

// --- printer -----------------------------------------------------------------

namespace detail {

inline std::string print_expr(const Expr& e, int min_prec) {
  const ExprNode& n = e.node();
  auto wrap = [&](std::string s, int prec) { return prec < min_prec ? "(" + s + ")" : s; };
  switch (n.op) {
    case Op::Number:
      return n.number < 0 || (n.number == 0.0 && std::signbit(n.number))
                 ? "(-" + format_double(-n.number) + ")"
                 : format_double(n.number);
    case Op::Param:
      return n.name;
    case Op::P:
      return "p";
    case Op::S:
      return "S";
    case Op::Coord:
      return "x" + std::to_string(n.axis + 1);
    case Op::Add:
      return wrap(print_expr(n.args[0], 1) + " + " + print_expr(n.args[1], 2), 1);
    case Op::Sub:
      return wrap(print_expr(n.args[0], 1) + " - " + print_expr(n.args[1], 2), 1);
    case Op::Mul:
      return wrap(print_expr(n.args[0], 2) + "*" + print_expr(n.args[1], 3), 2);
    case Op::Div:
      return wrap(print_expr(n.args[0], 2) + "/" + print_expr(n.args[1], 3), 2);
    case Op::Neg:
      return "(-" + print_expr(n.args[0], 3) + ")";
    case Op::Pow: {
      std::string ex;
      if (n.exponent.is_integer())
        ex = std::to_string(n.exponent.num);
      else
        ex = "(" + std::to_string(n.exponent.num) + "/" + std::to_string(n.exponent.den) + ")";
      return wrap(print_expr(n.args[0], 5) + "^" + ex, 4);
    }
    case Op::Log:
      return "log(" + print_expr(n.args[0], 0) + ")";
    case Op::GG:
      return "gg(" + print_expr(n.args[0], 0) + ", " + print_expr(n.args[1], 0) + ")";
    case Op::Lap:
      return "lap(" + print_expr(n.args[0], 0) + ")";
    case Op::Dt:
      return "dt(" + print_expr(n.args[0], 0) + ")";
  }
  return "?";
}

}  // namespace detail

inline std::string to_string(const Expr& e) { return detail::print_expr(e, 0); }

// --- parser ------------------------------------------------------------------

struct ParseOptions {
  // When set, identifiers that are not in this list (and not reserved) are rejected.
  std::optional<std::set<std::string>> known_params;
};

namespace detail {

enum class Tok { Number, Ident, LParen, RParen, Comma, Plus, Minus, Star, Slash, Caret, End };

struct Token {
  Tok kind = Tok::End;
  std::string text;
  double value = 0.0;
  std::size_t line = 1, column = 1;
};

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    while (true) {
      skip_space();
      Token t;
      t.line = line_;
      t.column = col_;
      if (pos_ >= src_.size()) {
        t.kind = Tok::End;
        out.push_back(t);
        return out;
      }
      const char c = src_[pos_];
      if (std::isdigit(static_cast<unsigned char>(c)) ||
          (c == '.' && pos_ + 1 < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
        const std::size_t start = pos_;
        while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) advance();
        if (pos_ < src_.size() && src_[pos_] == '.') {
          advance();
          while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) advance();
        }
        if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
          std::size_t look = pos_ + 1;
          if (look < src_.size() && (src_[look] == '+' || src_[look] == '-')) ++look;
          if (look < src_.size() && std::isdigit(static_cast<unsigned char>(src_[look]))) {
            while (pos_ < look) advance();
            while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) advance();
          }
        }
        t.kind = Tok::Number;
        t.text = std::string(src_.substr(start, pos_ - start));
        if (!parse_double(t.text, t.value) || !std::isfinite(t.value))
          throw ParseError(t.line, t.column, "malformed number '" + t.text + "'");
      } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        const std::size_t start = pos_;
        while (pos_ < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
          advance();
        t.kind = Tok::Ident;
        t.text = std::string(src_.substr(start, pos_ - start));
      } else {
        switch (c) {
          case '(': t.kind = Tok::LParen; break;
          case ')': t.kind = Tok::RParen; break;
          case ',': t.kind = Tok::Comma; break;
          case '+': t.kind = Tok::Plus; break;
          case '-': t.kind = Tok::Minus; break;
          case '*': t.kind = Tok::Star; break;
          case '/': t.kind = Tok::Slash; break;
          case '^': t.kind = Tok::Caret; break;
          default:
            throw ParseError(t.line, t.column, std::string("unexpected character '") + c + "'");
        }
        t.text = std::string(1, c);
        advance();
      }
      out.push_back(t);
    }
  }

 private:
  void advance() {
    if (src_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }
  void skip_space() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) advance();
  }

  std::string_view src_;
  std::size_t pos_ = 0, line_ = 1, col_ = 1;
};

inline bool is_coordinate_name(const std::string& s, std::size_t& axis) {
  if (s.size() < 2 || s[0] != 'x') return false;
  for (std::size_t i = 1; i < s.size(); ++i)
    if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
  if (s[1] == '0') return false;
  axis = std::stoul(s.substr(1)) - 1;
  return true;
}

class Parser {
 public:
  Parser(std::vector<Token> toks, const ParseOptions& opt) : toks_(std::move(toks)), opt_(opt) {}

  Expr parse_all() {
    Expr e = expr();
    if (peek().kind != Tok::End) fail(peek(), "unexpected '" + peek().text + "'");
    return e;
  }

 private:
  const Token& peek() const { return toks_[i_]; }
  const Token& take() { return toks_[i_++]; }
  [[noreturn]] void fail(const Token& t, const std::string& msg) const {
    throw ParseError(t.line, t.column, msg);
  }
  void expect(Tok k, const char* what) {
    if (peek().kind != k) fail(peek(), std::string("expected ") + what);
    take();
  }

  Expr expr() {
    using namespace dsl;
    Expr e = term();
    while (peek().kind == Tok::Plus || peek().kind == Tok::Minus) {
      const bool plus = take().kind == Tok::Plus;
      Expr r = term();
      e = plus ? e + r : e - r;
    }
    return e;
  }

  Expr term() {
    using namespace dsl;
    Expr e = factor();
    while (peek().kind == Tok::Star || peek().kind == Tok::Slash) {
      const bool mul = take().kind == Tok::Star;
      Expr r = factor();
      e = mul ? e * r : e / r;
    }
    return e;
  }

  Expr factor() {
    using namespace dsl;
    if (peek().kind == Tok::Minus) {
      take();
      Expr inner = factor();
      return -inner;
    }
    Expr a = atom();
    if (peek().kind == Tok::Caret) {
      take();
      a = dsl::pow(a, rational());
    }
    return a;
  }

  long integer() {
    const Token& t = peek();
    if (t.kind != Tok::Number || t.text.find_first_not_of("0123456789") != std::string::npos)
      fail(t, "expected integer exponent");
    take();
    return std::stol(t.text);
  }

  Rational rational() {
    if (peek().kind == Tok::LParen) {
      take();
      long sign = 1;
      if (peek().kind == Tok::Minus) take(), sign = -1;
      const long n = integer();
      long d = 1;
      if (peek().kind == Tok::Slash) {
        take();
        const Token& dt = peek();
        d = integer();
        if (d == 0) fail(dt, "zero denominator in exponent");
      }
      expect(Tok::RParen, "')' after exponent");
      return Rational(sign * n, d);
    }
    long sign = 1;
    if (peek().kind == Tok::Minus) take(), sign = -1;
    return Rational(sign * integer(), 1);
  }

  std::vector<Expr> call_args() {
    std::vector<Expr> args;
    expect(Tok::LParen, "'('");
    if (peek().kind == Tok::RParen) {
      take();
      return args;
    }
    args.push_back(expr());
    while (peek().kind == Tok::Comma) {
      take();
      args.push_back(expr());
    }
    expect(Tok::RParen, "')'");
    return args;
  }

  Expr atom() {
    const Token t = peek();
    switch (t.kind) {
      case Tok::Number:
        take();
        return Expr::number(t.value);
      case Tok::LParen: {
        take();
        Expr e = expr();
        expect(Tok::RParen, "')'");
        return e;
      }
      case Tok::Ident:
        take();
        return identifier(t);
      default:
        fail(t, t.kind == Tok::End ? "unexpected end of input" : "unexpected '" + t.text + "'");
    }
  }

  Expr identifier(const Token& t) {
    const std::string& s = t.text;
    const bool call = peek().kind == Tok::LParen;
    auto arity = [&](std::size_t want, std::vector<Expr>& args) {
      if (args.size() != want)
        fail(t, "'" + s + "' expects " + std::to_string(want) + " argument(s)");
    };
    if (s == "log" || s == "gg" || s == "lap" || s == "dt") {
      if (!call) fail(t, "'" + s + "' must be called with arguments");
      auto args = call_args();
      if (s == "gg") {
        arity(2, args);
        return dsl::gg(args[0], args[1]);
      }
      arity(1, args);
      if (s == "log") return dsl::log(args[0]);
      if (s == "lap") return dsl::lap(args[0]);
      return dsl::dt(args[0]);
    }
    if (const BuiltinInfo* b = find_builtin(s)) {
      std::vector<Expr> args;
      if (call) args = call_args();
      if (!args.empty() && args.size() != b->params.size())
        fail(t, "builtin '" + s + "' expects " + std::to_string(b->params.size()) + " argument(s)");
      return expand_builtin(s, std::move(args));
    }
    if (call) fail(t, "unknown function '" + s + "'");
    if (s == "p") return Expr::p();
    if (s == "S") return Expr::S();
    std::size_t axis = 0;
    if (is_coordinate_name(s, axis)) return Expr::coord(axis);
    if (opt_.known_params && !opt_.known_params->count(s)) fail(t, "unknown identifier '" + s + "'");
    return Expr::param(s);
  }

  std::vector<Token> toks_;
  std::size_t i_ = 0;
  const ParseOptions& opt_;
};

}  // namespace detail

inline Expr parse(std::string_view text, const ParseOptions& opt = {}) {
  detail::Lexer lex(text);
  detail::Parser parser(lex.run(), opt);
  return parser.parse_all();
}

// --- AST queries -------------------------------------------------------------

inline bool uses_op(const Expr& e, Op op) {
  if (e.op() == op) return true;
  for (const auto& a : e.node().args)
    if (uses_op(a, op)) return true;
  return false;
}

inline void collect_params(const Expr& e, std::set<std::string>& out) {
  if (e.op() == Op::Param) out.insert(e.node().name);
  for (const auto& a : e.node().args) collect_params(a, out);
}

inline void collect_coords(const Expr& e, std::set<std::size_t>& out) {
  if (e.op() == Op::Coord) out.insert(e.node().axis);
  for (const auto& a : e.node().args) collect_coords(a, out);
}

// True when the subtree has no dependence on p, S, coordinates or time.
inline bool is_constant(const Expr& e) {
  switch (e.op()) {
    case Op::P:
    case Op::S:
    case Op::Coord:
    case Op::Dt:
      return false;
    case Op::Pow:
      if (e.node().exponent.num == 0) return true;
      break;
    default:
      break;
  }
  for (const auto& a : e.node().args)
    if (!is_constant(a)) return false;
  return true;
}

using ParamMap = std::map<std::string, double>;

inline std::optional<double> constant_value(const Expr& e, const ParamMap& params) {
  const ExprNode& n = e.node();
  auto val = [&](std::size_t i) { return constant_value(n.args[i], params); };
  switch (n.op) {
    case Op::Number:
      return n.number;
    case Op::Param: {
      auto it = params.find(n.name);
      if (it == params.end()) return std::nullopt;
      return it->second;
    }
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div: {
      auto a = val(0), b = val(1);
      if (!a || !b) return std::nullopt;
      if (n.op == Op::Add) return *a + *b;
      if (n.op == Op::Sub) return *a - *b;
      if (n.op == Op::Mul) return *a * *b;
      return *a / *b;
    }
    case Op::Neg: {
      auto a = val(0);
      if (!a) return std::nullopt;
      return -*a;
    }
    case Op::Pow: {
      auto a = val(0);
      if (!a) return std::nullopt;
      return std::pow(*a, n.exponent.value());
    }
    case Op::Log: {
      auto a = val(0);
      if (!a) return std::nullopt;
      return std::log(*a);
    }
    default:
      return std::nullopt;
  }
}

// Spatial and total (spatial + temporal) derivative order of the expression,
// counted per product term with nested primitives adding onto their arguments.
struct DerivativeCount {
  int spatial = 0;
  int total = 0;
};

inline DerivativeCount derivative_count(const Expr& e) {
  const ExprNode& n = e.node();
  auto c = [&](std::size_t i) { return derivative_count(n.args[i]); };
  switch (n.op) {
    case Op::Number:
    case Op::Param:
    case Op::P:
    case Op::S:
    case Op::Coord:
      return {0, 0};
    case Op::Add:
    case Op::Sub: {
      auto a = c(0), b = c(1);
      return {std::max(a.spatial, b.spatial), std::max(a.total, b.total)};
    }
    case Op::Mul:
    case Op::Div: {
      auto a = c(0), b = c(1);
      return {a.spatial + b.spatial, a.total + b.total};
    }
    case Op::Neg:
    case Op::Log:
      return c(0);
    case Op::Pow: {
      auto a = c(0);
      if (n.exponent.is_integer() && n.exponent.num > 0)
        return {a.spatial * static_cast<int>(n.exponent.num), a.total * static_cast<int>(n.exponent.num)};
      return a;
    }
    case Op::GG: {
      if (is_constant(n.args[0]) || is_constant(n.args[1])) return {0, 0};
      auto a = c(0), b = c(1);
      return {2 + std::max(a.spatial, b.spatial), 2 + std::max(a.total, b.total)};
    }
    case Op::Lap: {
      if (is_constant(n.args[0])) return {0, 0};
      auto a = c(0);
      return {2 + a.spatial, 2 + a.total};
    }
    case Op::Dt: {
      auto a = c(0);
      return {a.spatial, a.total + 1};
    }
  }
  return {};
}

// --- density evaluation ------------------------------------------------------

struct TimeContext {
  HydroField before;
  HydroField after;
  double span = 0.0;  // t_after - t_before
};

struct DensityOptions {
  double clamp = 1e-300;
  const TimeContext* time = nullptr;
};

struct DensityResult {
  ScalarField density;
  std::size_t clamped_sites = 0;
};

namespace detail {

class Evaluator {
 public:
  Evaluator(const Metric& m, const ParamMap& params, const DensityOptions& opt, std::size_t n)
      : metric_(m), params_(params), opt_(opt), mask_(n, 0) {}

  std::size_t clamped() const {
    return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), 1));
  }

  ScalarField eval(const Expr& e, const HydroField& h) {
    const ExprNode& n = e.node();
    const GridPtr& g = h.grid_ptr();
    switch (n.op) {
      case Op::Number:
        return ScalarField(g, n.number);
      case Op::Param:
        return ScalarField(g, param(n.name));
      case Op::P:
        return h.p;
      case Op::S:
        return h.S;
      case Op::Coord:
        check_coord(h.grid(), n.axis);
        return ScalarField::from_function(g, [&](std::span<const double> x) { return x[n.axis]; });
      case Op::Add:
        return eval(n.args[0], h) + eval(n.args[1], h);
      case Op::Sub:
        return eval(n.args[0], h) - eval(n.args[1], h);
      case Op::Mul:
        return eval(n.args[0], h) * eval(n.args[1], h);
      case Op::Div: {
        ScalarField a = eval(n.args[0], h), b = eval(n.args[1], h);
        for (std::size_t s = 0; s < a.size(); ++s) {
          double d = b[s];
          if (std::abs(d) < opt_.clamp) {
            d = std::signbit(d) ? -opt_.clamp : opt_.clamp;
            mask_[s] = 1;
          }
          a[s] /= d;
        }
        return a;
      }
      case Op::Neg:
        return eval(n.args[0], h) * -1.0;
      case Op::Pow: {
        ScalarField a = eval(n.args[0], h);
        const Rational r = n.exponent;
        if (r.is_integer() && r.num >= 0) {
          for (std::size_t s = 0; s < a.size(); ++s) a[s] = ipow(a[s], r.num);
          return a;
        }
        const double ex = r.value();
        for (std::size_t s = 0; s < a.size(); ++s) {
          double b = a[s];
          if (b < opt_.clamp) {
            b = opt_.clamp;
            mask_[s] = 1;
          }
          a[s] = std::pow(b, ex);
        }
        return a;
      }
      case Op::Log: {
        ScalarField a = eval(n.args[0], h);
        for (std::size_t s = 0; s < a.size(); ++s) {
          double b = a[s];
          if (b < opt_.clamp) {
            b = opt_.clamp;
            mask_[s] = 1;
          }
          a[s] = std::log(b);
        }
        return a;
      }
      case Op::GG: {
        ScalarField out(g, 0.0);
        const bool same = n.args[0] == n.args[1];
        for (std::size_t k = 0; k < h.grid().dimension(); ++k) {
          ScalarField da = grad(n.args[0], h, k);
          if (same)
            out += (da * da) * metric_.inverse_mass(k);
          else
            out += (da * grad(n.args[1], h, k)) * metric_.inverse_mass(k);
        }
        return out;
      }
      case Op::Lap: {
        ScalarField out(g, 0.0);
        for (std::size_t k = 0; k < h.grid().dimension(); ++k)
          out += second(n.args[0], h, k) * metric_.inverse_mass(k);
        return out;
      }
      case Op::Dt: {
        if (!opt_.time || !(opt_.time->span > 0.0))
          throw InvalidArgument("dt(...) requires a two-snapshot trajectory with positive span");
        ScalarField a = eval(n.args[0], opt_.time->after);
        a -= eval(n.args[0], opt_.time->before);
        a *= 1.0 / opt_.time->span;
        return a;
      }
    }
    throw InvalidArgument("evaluate_density: unknown node");
  }

 private:
  static double ipow(double b, long e) {
    double r = 1.0;
    while (e > 0) {
      if (e & 1) r *= b;
      b *= b;
      e >>= 1;
    }
    return r;
  }

  double param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw InvalidArgument("unbound parameter '" + name + "'");
    return it->second;
  }

  void check_coord(const Grid& g, std::size_t axis) const {
    if (axis >= g.dimension())
      throw InvalidArgument("coordinate x" + std::to_string(axis + 1) + " exceeds grid dimension");
  }

  // Gradient of a subexpression; linear combinations are differentiated term by
  // term so that phase seams in S and coordinates stay exact.
  ScalarField grad(const Expr& e, const HydroField& h, std::size_t k) {
    const ExprNode& n = e.node();
    const GridPtr& g = h.grid_ptr();
    switch (n.op) {
      case Op::Number:
      case Op::Param:
        return ScalarField(g, 0.0);
      case Op::S:
        return gradient(h.S, k, h.phase_diff());
      case Op::P:
        return gradient(h.p, k);
      case Op::Coord:
        check_coord(h.grid(), n.axis);
        return ScalarField(g, n.axis == k ? 1.0 : 0.0);
      case Op::Add:
        return grad(n.args[0], h, k) + grad(n.args[1], h, k);
      case Op::Sub:
        return grad(n.args[0], h, k) - grad(n.args[1], h, k);
      case Op::Neg:
        return grad(n.args[0], h, k) * -1.0;
      case Op::Mul:
        if (is_constant(n.args[0])) return grad(n.args[1], h, k) * scalar(n.args[0], h);
        if (is_constant(n.args[1])) return grad(n.args[0], h, k) * scalar(n.args[1], h);
        break;
      case Op::Div:
        if (is_constant(n.args[1])) return grad(n.args[0], h, k) * (1.0 / scalar(n.args[1], h));
        break;
      default:
        break;
    }
    return gradient(eval(e, h), k);
  }

  ScalarField second(const Expr& e, const HydroField& h, std::size_t k) {
    const ExprNode& n = e.node();
    const GridPtr& g = h.grid_ptr();
    switch (n.op) {
      case Op::Number:
      case Op::Param:
      case Op::Coord:
        if (n.op == Op::Coord) check_coord(h.grid(), n.axis);
        return ScalarField(g, 0.0);
      case Op::S:
        return second_derivative(h.S, k, k, h.phase_diff());
      case Op::P:
        return second_derivative(h.p, k, k);
      case Op::Add:
        return second(n.args[0], h, k) + second(n.args[1], h, k);
      case Op::Sub:
        return second(n.args[0], h, k) - second(n.args[1], h, k);
      case Op::Neg:
        return second(n.args[0], h, k) * -1.0;
      case Op::Mul:
        if (is_constant(n.args[0])) return second(n.args[1], h, k) * scalar(n.args[0], h);
        if (is_constant(n.args[1])) return second(n.args[0], h, k) * scalar(n.args[1], h);
        break;
      case Op::Div:
        if (is_constant(n.args[1])) return second(n.args[0], h, k) * (1.0 / scalar(n.args[1], h));
        break;
      default:
        break;
    }
    return second_derivative(eval(e, h), k, k);
  }

  double scalar(const Expr& e, const HydroField& h) {
    ScalarField f = eval(e, h);
    return f[0];
  }

  const Metric& metric_;
  const ParamMap& params_;
  DensityOptions opt_;
  std::vector<char> mask_;
};

}  // namespace detail

inline DensityResult evaluate_density(const Expr& e, const HydroField& h, const Metric& metric,
                                      const ParamMap& params = {}, const DensityOptions& opt = {}) {
  metric.check_grid(h.grid());
  if (uses_op(e, Op::Dt) && !opt.time)
    throw InvalidArgument("dt(...) requires a two-snapshot trajectory");
  detail::Evaluator ev(metric, params, opt, h.size());
  ScalarField d = ev.eval(e, h);
  require_finite(d, "evaluate_density");
  return DensityResult{std::move(d), ev.clamped()};
}

// --- structural audit --------------------------------------------------------

enum class Homogeneity { Degree0, Inhomogeneous };

// Symbolic behaviour of a subexpression under p -> lambda p.
struct Scaling {
  enum Kind { Zero, Power, LogShift, Mixed } kind = Mixed;
  double degree = 0.0;              // Power: e -> lambda^degree e
  std::optional<double> shift;      // LogShift: e -> e + shift*log(lambda)
  std::optional<double> constant;   // known constant value of a field-free subtree
};

struct StructuralReport {
  int max_derivatives = 0;        // spatial derivatives per product term
  int max_total_derivatives = 0;  // spatial + temporal
  Homogeneity homogeneity = Homogeneity::Degree0;
  double witness_lambda = 0.0;
  double deviation = 0.0;
  std::string symbolic;       // symbolic scaling class
  bool symbolic_definite = false;
  bool numeric_agrees = true;
  bool uses_S = false;
  bool uses_x = false;
  bool uses_dt = false;
  std::vector<std::size_t> coordinates;
};

namespace detail {

inline Scaling scaling_of(const Expr& e, const ParamMap& params) {
  const ExprNode& n = e.node();
  auto sc = [&](std::size_t i) { return scaling_of(n.args[i], params); };
  Scaling out;
  auto power = [](double d) {
    Scaling s;
    s.kind = Scaling::Power;
    s.degree = d;
    return s;
  };
  auto zero = []() {
    Scaling s;
    s.kind = Scaling::Zero;
    s.constant = 0.0;
    return s;
  };
  auto logshift = [](std::optional<double> c) {
    Scaling s;
    s.kind = Scaling::LogShift;
    s.shift = c;
    return s;
  };
  auto derivative = [&](const Scaling& a) {
    switch (a.kind) {
      case Scaling::Zero:
        return zero();
      case Scaling::Power:
        if (a.constant) return zero();
        return power(a.degree);
      case Scaling::LogShift:
        return power(0.0);
      default:
        return Scaling{};
    }
  };
  switch (n.op) {
    case Op::Number:
    case Op::Param: {
      auto c = constant_value(e, params);
      if (c && *c == 0.0) return zero();
      out = power(0.0);
      out.constant = c ? c : std::optional<double>(std::nan(""));
      return out;
    }
    case Op::S:
    case Op::Coord:
      return power(0.0);
    case Op::P:
      return power(1.0);
    case Op::Neg: {
      Scaling a = sc(0);
      if (a.kind == Scaling::LogShift && a.shift) a.shift = -*a.shift;
      if (a.constant) a.constant = -*a.constant;
      return a;
    }
    case Op::Add:
    case Op::Sub: {
      Scaling a = sc(0), b = sc(1);
      const double sgn = n.op == Op::Add ? 1.0 : -1.0;
      if (a.kind == Scaling::Zero) {
        if (b.kind == Scaling::LogShift && b.shift) b.shift = sgn * *b.shift;
        if (b.constant) b.constant = sgn * *b.constant;
        return b;
      }
      if (b.kind == Scaling::Zero) return a;
      if (a.kind == Scaling::Power && b.kind == Scaling::Power && a.degree == b.degree) {
        Scaling r = power(a.degree);
        if (a.constant && b.constant) r.constant = *a.constant + sgn * *b.constant;
        return r;
      }
      auto as_shift = [](const Scaling& s) -> std::optional<std::optional<double>> {
        if (s.kind == Scaling::LogShift) return s.shift;
        if (s.kind == Scaling::Power && s.degree == 0.0) return std::optional<double>(0.0);
        return std::nullopt;
      };
      auto sa = as_shift(a), sb = as_shift(b);
      if (sa && sb) {
        std::optional<double> c;
        if (*sa && *sb) c = **sa + sgn * **sb;
        if (c && *c == 0.0) return power(0.0);
        return logshift(c);
      }
      return Scaling{};
    }
    case Op::Mul:
    case Op::Div: {
      Scaling a = sc(0), b = sc(1);
      if (a.kind == Scaling::Zero) return zero();
      if (n.op == Op::Mul && b.kind == Scaling::Zero) return zero();
      if (a.kind == Scaling::Power && b.kind == Scaling::Power) {
        Scaling r = power(n.op == Op::Mul ? a.degree + b.degree : a.degree - b.degree);
        if (a.constant && b.constant)
          r.constant = n.op == Op::Mul ? *a.constant * *b.constant : *a.constant / *b.constant;
        return r;
      }
      auto scale_shift = [&](const Scaling& ls, const Scaling& k, bool divide) {
        std::optional<double> c;
        if (ls.shift && k.constant && std::isfinite(*k.constant))
          c = divide ? *ls.shift / *k.constant : *ls.shift * *k.constant;
        return logshift(c);
      };
      if (a.kind == Scaling::LogShift && b.kind == Scaling::Power && b.constant)
        return scale_shift(a, b, n.op == Op::Div);
      if (n.op == Op::Mul && b.kind == Scaling::LogShift && a.kind == Scaling::Power && a.constant)
        return scale_shift(b, a, false);
      return Scaling{};
    }
    case Op::Pow: {
      if (n.exponent.num == 0) {
        out = power(0.0);
        out.constant = 1.0;
        return out;
      }
      Scaling a = sc(0);
      if (a.kind == Scaling::Zero && n.exponent.value() > 0) return zero();
      if (a.kind == Scaling::Power) {
        Scaling r = power(a.degree * n.exponent.value());
        if (a.constant) r.constant = std::pow(*a.constant, n.exponent.value());
        return r;
      }
      return Scaling{};
    }
    case Op::Log: {
      Scaling a = sc(0);
      if (a.kind == Scaling::Power) {
        if (a.constant) {
          out = power(0.0);
          out.constant = std::log(*a.constant);
          return out;
        }
        if (a.degree == 0.0) return power(0.0);
        return logshift(a.degree);
      }
      return Scaling{};
    }
    case Op::GG: {
      Scaling a = derivative(sc(0)), b = derivative(sc(1));
      if (a.kind == Scaling::Zero || b.kind == Scaling::Zero) return zero();
      if (a.kind == Scaling::Power && b.kind == Scaling::Power) return power(a.degree + b.degree);
      return Scaling{};
    }
    case Op::Lap:
    case Op::Dt:
      return derivative(sc(0));
  }
  return Scaling{};
}

inline std::string describe(const Scaling& s) {
  switch (s.kind) {
    case Scaling::Zero:
      return "zero";
    case Scaling::Power:
      return s.degree == 0.0 ? "degree0" : "power(" + format_double(s.degree) + ")";
    case Scaling::LogShift:
      return s.shift ? "logshift(" + format_double(*s.shift) + ")" : "logshift(?)";
    default:
      return "mixed";
  }
}

// Smooth periodic probe field used by the numeric homogeneity test.
struct Probe {
  HydroField state;
  std::optional<TimeContext> time;
};

inline Probe smooth_probe(std::size_t dims, std::uint64_t seed, double hbar = 1.0) {
  const std::size_t pts = dims == 1 ? 96 : (dims == 2 ? 24 : 12);
  GridSpec spec{1, dims, {}};
  for (std::size_t k = 0; k < dims; ++k)
    spec.axes.push_back(AxisSpec{pts, 0.0, 2.0 * std::numbers::pi, Boundary::Periodic});
  auto grid = Grid::make(spec);
  Rng rng(seed);
  auto trig = [&](double amp) {
    std::vector<double> c(dims * 6);
    for (double& v : c) v = amp * rng.normal();
    return ScalarField::from_function(grid, [c, dims](std::span<const double> x) {
      double r = 0.0;
      for (std::size_t k = 0; k < dims; ++k)
        for (int m = 1; m <= 3; ++m)
          r += c[k * 6 + 2 * (m - 1)] * std::cos(m * x[k]) / m +
               c[k * 6 + 2 * (m - 1) + 1] * std::sin(m * x[k]) / m;
      return r;
    });
  };
  ScalarField logp = trig(0.5), S = trig(0.8), rate_p = trig(0.3), rate_S = trig(0.3);
  ScalarField p = logp.map([](double v) { return std::exp(v); });
  HydroField h(p, S, hbar);
  h.normalize();
  const double span = 1e-3;
  auto shifted = [&](double sgn) {
    ScalarField pp(h.grid_ptr()), ss(h.grid_ptr());
    for (std::size_t s = 0; s < h.size(); ++s) {
      pp[s] = h.p[s] * std::exp(sgn * 0.5 * span * rate_p[s]);
      ss[s] = h.S[s] + sgn * 0.5 * span * rate_S[s];
    }
    return HydroField(pp, ss, hbar);
  };
  Probe pr{h, TimeContext{shifted(-1.0), shifted(1.0), span}};
  return pr;
}

inline HydroField scale_p(const HydroField& h, double lambda) {
  return HydroField(h.p * lambda, h.S, h.hbar);
}

}  // namespace detail

struct AuditOptions {
  ParamMap params;
  std::uint64_t seed = 0x5eed;
  double tol = 1e-8;
  double unbound_param_value = 0.7;
};

// Maximum |H(lambda p) - H(p)| over the probe sites together with the density scale.
inline std::pair<double, double> homogeneity_deviation(const Expr& e, const HydroField& h,
                                                       const TimeContext* time,
                                                       const Metric& metric,
                                                       const ParamMap& params, double lambda) {
  DensityOptions o0;
  o0.time = time;
  const ScalarField H = evaluate_density(e, h, metric, params, o0).density;
  std::optional<TimeContext> tl;
  DensityOptions o1;
  if (time) {
    tl = TimeContext{detail::scale_p(time->before, lambda), detail::scale_p(time->after, lambda),
                     time->span};
    o1.time = &*tl;
  }
  const ScalarField Hl = evaluate_density(e, detail::scale_p(h, lambda), metric, params, o1).density;
  return {linf_distance(H, Hl), H.max_abs()};
}

inline StructuralReport structural_audit(const Expr& e, const AuditOptions& opt = {}) {
  StructuralReport r;
  const DerivativeCount dc = derivative_count(e);
  r.max_derivatives = dc.spatial;
  r.max_total_derivatives = dc.total;
  r.uses_S = uses_op(e, Op::S);
  r.uses_x = uses_op(e, Op::Coord);
  r.uses_dt = uses_op(e, Op::Dt);
  std::set<std::size_t> coords;
  collect_coords(e, coords);
  r.coordinates.assign(coords.begin(), coords.end());

  ParamMap params = opt.params;
  std::set<std::string> names;
  collect_params(e, names);
  for (const auto& n : names)
    if (!params.count(n)) params[n] = opt.unbound_param_value;

  const Scaling s = detail::scaling_of(e, params);
  r.symbolic = detail::describe(s);
  std::optional<bool> sym_homog;
  if (s.kind == Scaling::Zero || (s.kind == Scaling::Power && s.degree == 0.0)) sym_homog = true;
  if ((s.kind == Scaling::Power && s.degree != 0.0) ||
      (s.kind == Scaling::LogShift && (!s.shift || *s.shift != 0.0)))
    sym_homog = false;
  r.symbolic_definite = sym_homog.has_value();

  const std::size_t dims = coords.empty() ? 1 : std::max<std::size_t>(1, *coords.rbegin() + 1);
  detail::Probe probe = detail::smooth_probe(dims, opt.seed);
  const Metric metric = Metric::for_grid(probe.state.grid());
  bool num_homog = true;
  for (double lambda : {2.0, 0.5, 10.0}) {
    auto [dev, scale] = homogeneity_deviation(e, probe.state, r.uses_dt ? &*probe.time : nullptr,
                                              metric, params, lambda);
    if (dev > opt.tol * std::max(1.0, scale)) {
      num_homog = false;
      r.witness_lambda = lambda;
      r.deviation = dev;
      break;
    }
  }
  r.numeric_agrees = !sym_homog || *sym_homog == num_homog;
  const bool homog = sym_homog && r.numeric_agrees ? *sym_homog : num_homog;
  r.homogeneity = homog ? Homogeneity::Degree0 : Homogeneity::Inhomogeneous;
  if (homog) r.witness_lambda = 0.0, r.deviation = 0.0;
  return r;
}

}  // namespace infoqm
