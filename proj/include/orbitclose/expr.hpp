#pragma once

// Expression trees for vector-field components: a recursive-descent parser,
// a canonical printer and an evaluator generic over double and Jet.

#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "orbitclose/errors.hpp"
#include "orbitclose/jet.hpp"

namespace orbitclose::expr {

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

enum class Op { Add, Sub, Mul, Div, Pow };
enum class Func { Sin, Cos, Exp, Log, Sqrt };

struct Number {
  double value;
};
struct Coord {
  int index;
};
struct Time {};
struct Neg {
  ExprPtr arg;
};
struct Binary {
  Op op;
  ExprPtr lhs, rhs;
};
struct Call {
  Func fn;
  ExprPtr arg;
};

struct Expr {
  std::variant<Number, Coord, Time, Neg, Binary, Call> node;
};

inline ExprPtr make(auto node) { return std::make_shared<const Expr>(Expr{std::move(node)}); }

inline const char* func_name(Func f) {
  switch (f) {
    case Func::Sin: return "sin";
    case Func::Cos: return "cos";
    case Func::Exp: return "exp";
    case Func::Log: return "log";
    case Func::Sqrt: return "sqrt";
  }
  return "?";
}

inline char op_char(Op op) {
  switch (op) {
    case Op::Add: return '+';
    case Op::Sub: return '-';
    case Op::Mul: return '*';
    case Op::Div: return '/';
    case Op::Pow: return '^';
  }
  return '?';
}

inline bool structurally_equal(const Expr& a, const Expr& b) {
  if (a.node.index() != b.node.index()) return false;
  return std::visit(
      [&](const auto& x) -> bool {
        using T = std::decay_t<decltype(x)>;
        const auto& y = std::get<T>(b.node);
        if constexpr (std::is_same_v<T, Number>) {
          return x.value == y.value;
        } else if constexpr (std::is_same_v<T, Coord>) {
          return x.index == y.index;
        } else if constexpr (std::is_same_v<T, Time>) {
          return true;
        } else if constexpr (std::is_same_v<T, Neg>) {
          return structurally_equal(*x.arg, *y.arg);
        } else if constexpr (std::is_same_v<T, Binary>) {
          return x.op == y.op && structurally_equal(*x.lhs, *y.lhs) && structurally_equal(*x.rhs, *y.rhs);
        } else {
          return x.fn == y.fn && structurally_equal(*x.arg, *y.arg);
        }
      },
      a.node);
}

inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string s = buf;
  // keep the printed literal re-parseable as a number
  if (s == "inf" || s == "-inf" || s == "nan") throw DomainError("non-finite literal");
  return s;
}

/// Fully parenthesised form; parse(print(e)) reproduces e exactly.
inline std::string print(const Expr& e, const std::vector<std::string>& names) {
  return std::visit(
      [&](const auto& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, Number>) {
          return x.value < 0 ? "(" + format_number(x.value) + ")" : format_number(x.value);
        } else if constexpr (std::is_same_v<T, Coord>) {
          return names.at(x.index);
        } else if constexpr (std::is_same_v<T, Time>) {
          return "t";
        } else if constexpr (std::is_same_v<T, Neg>) {
          return "(-" + print(*x.arg, names) + ")";
        } else if constexpr (std::is_same_v<T, Binary>) {
          return "(" + print(*x.lhs, names) + " " + op_char(x.op) + " " + print(*x.rhs, names) + ")";
        } else {
          return std::string(func_name(x.fn)) + "(" + print(*x.arg, names) + ")";
        }
      },
      e.node);
}

inline bool depends_on_time(const Expr& e) {
  return std::visit(
      [](const auto& x) -> bool {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, Time>) return true;
        else if constexpr (std::is_same_v<T, Neg> || std::is_same_v<T, Call>) return depends_on_time(*x.arg);
        else if constexpr (std::is_same_v<T, Binary>) return depends_on_time(*x.lhs) || depends_on_time(*x.rhs);
        else return false;
      },
      e.node);
}

namespace detail {

inline double checked(double v, const char* what) {
  if (!std::isfinite(v)) throw DomainError(std::string("non-finite result in ") + what);
  return v;
}

inline double apply(Func f, double a) {
  switch (f) {
    case Func::Sin: return std::sin(a);
    case Func::Cos: return std::cos(a);
    case Func::Exp: return checked(std::exp(a), "exp");
    case Func::Log:
      if (!(a > 0.0)) throw DomainError("log of non-positive value");
      return std::log(a);
    case Func::Sqrt:
      if (a < 0.0) throw DomainError("sqrt of negative value");
      return std::sqrt(a);
  }
  return 0.0;
}

inline Jet apply(Func f, const Jet& a) {
  switch (f) {
    case Func::Sin: return sin(a);
    case Func::Cos: return cos(a);
    case Func::Exp: return exp(a);
    case Func::Log: return log(a);
    case Func::Sqrt: return sqrt(a);
  }
  return Jet(0.0);
}

inline double divide(double a, double b) {
  if (b == 0.0) throw DomainError("division by zero");
  return a / b;
}
inline Jet divide(const Jet& a, const Jet& b) { return a / b; }

inline double power(double a, double b) { return checked(std::pow(a, b), "power"); }
inline Jet power(const Jet& a, const Jet& b) {
  if (b.is_constant()) return pow(a, b.value());
  return exp(b * log(a));
}

}  // namespace detail

template <class S>
S eval(const Expr& e, std::span<const S> coords, const S& t) {
  return std::visit(
      [&](const auto& x) -> S {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, Number>) {
          return S(x.value);
        } else if constexpr (std::is_same_v<T, Coord>) {
          return coords[x.index];
        } else if constexpr (std::is_same_v<T, Time>) {
          return t;
        } else if constexpr (std::is_same_v<T, Neg>) {
          return -eval(*x.arg, coords, t);
        } else if constexpr (std::is_same_v<T, Binary>) {
          if (x.op == Op::Pow) {
            // integer literal exponents keep negative bases legal
            if (const auto* num = std::get_if<Number>(&x.rhs->node);
                num && num->value == std::floor(num->value) && std::abs(num->value) <= 64) {
              const int n = static_cast<int>(num->value);
              S base = eval(*x.lhs, coords, t);
              if (n < 0 && value_of(base) == 0.0) throw DomainError("division by zero");
              return ipow(base, n);
            }
            return detail::power(eval(*x.lhs, coords, t), eval(*x.rhs, coords, t));
          }
          S a = eval(*x.lhs, coords, t);
          S b = eval(*x.rhs, coords, t);
          switch (x.op) {
            case Op::Add: return a + b;
            case Op::Sub: return a - b;
            case Op::Mul: return a * b;
            case Op::Div: return detail::divide(a, b);
            default: break;
          }
          return S(0.0);
        } else {
          return detail::apply(x.fn, eval(*x.arg, coords, t));
        }
      },
      e.node);
}

/// Parses "[e1, ..., en]". Coordinates are bound by name, parameters are
/// substituted as numbers, and "t" denotes time.
class Parser {
 public:
  Parser(std::string_view src, const std::vector<std::string>& coords, const std::map<std::string, double>& params)
      : src_(src), coords_(coords), params_(params) {}

  std::vector<ExprPtr> parse_components() {
    for (std::size_t i = 0; i < src_.size(); ++i) {
      if (static_cast<unsigned char>(src_[i]) > 127) throw SyntaxError(i, "ASCII input");
    }
    std::vector<ExprPtr> out;
    expect('[');
    out.push_back(parse_expr());
    while (peek() == ',') {
      ++pos_;
      out.push_back(parse_expr());
    }
    expect(']');
    skip_ws();
    if (pos_ != src_.size()) throw SyntaxError(pos_, "end of input");
    return out;
  }

  ExprPtr parse_single() {
    auto e = parse_expr();
    skip_ws();
    if (pos_ != src_.size()) throw SyntaxError(pos_, "end of input");
    return e;
  }

 private:
  void skip_ws() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }
  char peek() {
    skip_ws();
    return pos_ < src_.size() ? src_[pos_] : '\0';
  }
  void expect(char c) {
    if (peek() != c) throw SyntaxError(pos_, std::string("'") + c + "'");
    ++pos_;
  }

  ExprPtr parse_expr() {
    auto lhs = parse_term();
    for (char c = peek(); c == '+' || c == '-'; c = peek()) {
      const std::size_t at = pos_++;
      auto rhs = operand(at, [&] { return parse_term(); });
      lhs = make(Binary{c == '+' ? Op::Add : Op::Sub, lhs, rhs});
    }
    return lhs;
  }

  ExprPtr parse_term() {
    auto lhs = parse_unary();
    for (char c = peek(); c == '*' || c == '/'; c = peek()) {
      const std::size_t at = pos_++;
      auto rhs = operand(at, [&] { return parse_unary(); });
      lhs = make(Binary{c == '*' ? Op::Mul : Op::Div, lhs, rhs});
    }
    return lhs;
  }

  ExprPtr parse_unary() {
    const char c = peek();
    if (c == '-' || c == '+') {
      const std::size_t at = pos_++;
      auto arg = operand(at, [&] { return parse_unary(); });
      if (c == '+') return arg;
      if (const auto* num = std::get_if<Number>(&arg->node)) return make(Number{-num->value});
      return make(Neg{arg});
    }
    return parse_power();
  }

  ExprPtr parse_power() {
    auto base = parse_primary();
    if (peek() == '^') {
      const std::size_t at = pos_++;
      auto ex = operand(at, [&] { return parse_unary(); });
      return make(Binary{Op::Pow, base, ex});
    }
    return base;
  }

  // A missing operand is reported at the operator that needed it.
  template <class F>
  ExprPtr operand(std::size_t op_at, F&& f) {
    const char c = peek();
    if (c == '\0' || c == ',' || c == ']' || c == ')' || c == '*' || c == '/' || c == '^') {
      throw SyntaxError(op_at, "operand after '" + std::string(1, src_[op_at]) + "'");
    }
    return f();
  }

  ExprPtr parse_primary() {
    const char c = peek();
    if (c == '(') {
      ++pos_;
      auto e = parse_expr();
      expect(')');
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_identifier();
    throw SyntaxError(pos_, "number, identifier or '('");
  }

  ExprPtr parse_number() {
    const char* begin = src_.data() + pos_;
    char* end = nullptr;
    const std::string tmp(begin, src_.size() - pos_);
    const double v = std::strtod(tmp.c_str(), &end);
    const std::size_t len = static_cast<std::size_t>(end - tmp.c_str());
    if (len == 0) throw SyntaxError(pos_, "number");
    pos_ += len;
    return make(Number{v});
  }

  ExprPtr parse_identifier() {
    const std::size_t start = pos_;
    while (pos_ < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) ++pos_;
    const std::string name(src_.substr(start, pos_ - start));
    if (peek() == '(') {
      static const std::map<std::string, Func> funcs = {
          {"sin", Func::Sin}, {"cos", Func::Cos}, {"exp", Func::Exp}, {"log", Func::Log}, {"sqrt", Func::Sqrt}};
      auto it = funcs.find(name);
      if (it == funcs.end()) throw UnknownSymbol("unknown function '" + name + "' at offset " + std::to_string(start));
      ++pos_;
      auto arg = parse_expr();
      expect(')');
      return make(Call{it->second, arg});
    }
    for (std::size_t i = 0; i < coords_.size(); ++i) {
      if (coords_[i] == name) return make(Coord{static_cast<int>(i)});
    }
    if (name == "t") return make(Time{});
    if (auto it = params_.find(name); it != params_.end()) return make(Number{it->second});
    if (name == "pi") return make(Number{std::numbers::pi});
    throw UnknownSymbol("unknown symbol '" + name + "' at offset " + std::to_string(start));
  }

  std::string_view src_;
  const std::vector<std::string>& coords_;
  const std::map<std::string, double>& params_;
  std::size_t pos_ = 0;
};

}  // namespace orbitclose::expr
