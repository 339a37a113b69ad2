#include "shf/predicate.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

namespace shf::predicate {

std::string_view type_name(Type t) {
  switch (t) {
    case Type::number: return "number";
    case Type::string: return "string";
    case Type::boolean: return "bool";
  }
  return "?";
}

std::optional<Value> MapContext::field(std::string_view name) const {
  auto it = fields.find(name);
  if (it == fields.end()) return std::nullopt;
  return it->second;
}

std::optional<std::string> MapContext::device(std::string_view name) const {
  auto it = devices.find(name);
  if (it == devices.end()) return std::nullopt;
  return it->second;
}

double parse_clock(std::string_view s) {
  auto colon = s.find(':');
  if (colon == std::string_view::npos || colon == 0 || colon + 3 != s.size()) {
    throw Error(Errc::parse_error, "bad time of day '" + std::string(s) + "'");
  }
  int h = 0, m = 0;
  for (char c : s.substr(0, colon)) {
    if (!std::isdigit(static_cast<unsigned char>(c))) throw Error(Errc::parse_error, "bad time of day");
    h = h * 10 + (c - '0');
  }
  for (char c : s.substr(colon + 1)) {
    if (!std::isdigit(static_cast<unsigned char>(c))) throw Error(Errc::parse_error, "bad time of day");
    m = m * 10 + (c - '0');
  }
  if (h > 24 || m > 59 || (h == 24 && m != 0)) throw Error(Errc::parse_error, "time of day out of range");
  return h * 3600.0 + m * 60.0;
}

enum class Op { eq, ne, lt, le, gt, ge };

struct Node {
  enum class Kind { literal, field, device, param, compare, in_list, in_clock, and_, or_, not_ };
  Kind kind;
  Type type = Type::boolean;
  Value literal;
  std::string name;
  Op op = Op::eq;
  std::vector<std::shared_ptr<const Node>> kids;
  std::vector<Value> list;
  double from = 0, to = 0;
};

namespace {

using NodePtr = std::shared_ptr<const Node>;
using Params = std::map<std::string, double, std::less<>>;

enum class Tok { ident, number, string, param, clock, lparen, rparen, lbracket, rbracket, comma, dots, op, end };

struct Token {
  Tok kind;
  std::string text;
  double number = 0;
  Op op = Op::eq;
  std::size_t pos = 0;
};

[[noreturn]] void syntax(const std::string& what, std::size_t pos) {
  throw Error(Errc::parse_error, what + " at column " + std::to_string(pos + 1));
}

bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.'; }

std::vector<Token> lex(std::string_view s) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < s.size()) {
    char c = s[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    Token t;
    t.pos = i;
    if (std::isdigit(static_cast<unsigned char>(c)) || (c == '-' && i + 1 < s.size() && std::isdigit(static_cast<unsigned char>(s[i + 1])))) {
      std::size_t j = i + 1;
      while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
      if (j < s.size() && s[j] == ':' && c != '-') {
        std::size_t k = j + 1;
        while (k < s.size() && std::isdigit(static_cast<unsigned char>(s[k]))) ++k;
        t.kind = Tok::clock;
        t.text = std::string(s.substr(i, k - i));
        t.number = parse_clock(t.text);
        out.push_back(t);
        i = k;
        continue;
      }
      if (j + 1 < s.size() && s[j] == '.' && std::isdigit(static_cast<unsigned char>(s[j + 1]))) {
        ++j;
        while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
      }
      if (j < s.size() && (s[j] == 'e' || s[j] == 'E')) {
        std::size_t k = j + 1;
        if (k < s.size() && (s[k] == '+' || s[k] == '-')) ++k;
        if (k < s.size() && std::isdigit(static_cast<unsigned char>(s[k]))) {
          j = k;
          while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
        }
      }
      t.kind = Tok::number;
      t.text = std::string(s.substr(i, j - i));
      t.number = std::stod(t.text);
      out.push_back(t);
      i = j;
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '$') {
      std::size_t j = i + 1;
      while (j < s.size() && ident_char(s[j])) ++j;
      t.kind = c == '$' ? Tok::param : Tok::ident;
      t.text = std::string(s.substr(c == '$' ? i + 1 : i, j - (c == '$' ? i + 1 : i)));
      if (t.text.empty()) syntax("empty parameter name", i);
      out.push_back(t);
      i = j;
      continue;
    }
    if (c == '"') {
      std::size_t j = i + 1;
      std::string v;
      while (j < s.size() && s[j] != '"') {
        if (s[j] == '\\' && j + 1 < s.size()) ++j;
        v.push_back(s[j++]);
      }
      if (j >= s.size()) syntax("unterminated string", i);
      t.kind = Tok::string;
      t.text = v;
      out.push_back(t);
      i = j + 1;
      continue;
    }
    auto two = s.substr(i, 2);
    if (two == "..") {
      t.kind = Tok::dots;
      i += 2;
    } else if (two == "==" || two == "!=" || two == "<=" || two == ">=") {
      t.kind = Tok::op;
      t.op = two == "==" ? Op::eq : two == "!=" ? Op::ne : two == "<=" ? Op::le : Op::ge;
      i += 2;
    } else if (c == '<' || c == '>') {
      t.kind = Tok::op;
      t.op = c == '<' ? Op::lt : Op::gt;
      ++i;
    } else if (c == '(' || c == ')' || c == '[' || c == ']' || c == ',') {
      t.kind = c == '(' ? Tok::lparen : c == ')' ? Tok::rparen : c == '[' ? Tok::lbracket : c == ']' ? Tok::rbracket : Tok::comma;
      ++i;
    } else {
      syntax(std::string("unexpected character '") + c + "'", i);
    }
    out.push_back(t);
  }
  out.push_back({Tok::end, "", 0, Op::eq, s.size()});
  return out;
}

Type type_of(const Value& v) {
  if (std::holds_alternative<double>(v)) return Type::number;
  if (std::holds_alternative<std::string>(v)) return Type::string;
  return Type::boolean;
}

class Parser {
 public:
  Parser(std::vector<Token> toks, const Schema& schema) : toks_(std::move(toks)), schema_(schema) {}

  NodePtr parse() {
    auto n = parse_or();
    if (peek().kind != Tok::end) syntax("unexpected '" + peek().text + "'", peek().pos);
    expect_type(*n, Type::boolean, 0);
    return n;
  }

  std::vector<std::string> params;
  std::vector<std::string> fields;

 private:
  const Token& peek() const { return toks_[i_]; }
  Token take() { return toks_[i_++]; }
  bool keyword(std::string_view kw) const { return peek().kind == Tok::ident && peek().text == kw; }

  static void expect_type(const Node& n, Type t, std::size_t pos) {
    if (n.type != t) {
      syntax("expected " + std::string(type_name(t)) + " expression, found " + std::string(type_name(n.type)), pos);
    }
  }

  NodePtr parse_or() {
    auto first = parse_and();
    if (!keyword("or")) return first;
    auto n = std::make_shared<Node>();
    n->kind = Node::Kind::or_;
    expect_type(*first, Type::boolean, peek().pos);
    n->kids.push_back(first);
    while (keyword("or")) {
      auto pos = take().pos;
      auto k = parse_and();
      expect_type(*k, Type::boolean, pos);
      n->kids.push_back(k);
    }
    return n;
  }

  NodePtr parse_and() {
    auto first = parse_unary();
    if (!keyword("and")) return first;
    auto n = std::make_shared<Node>();
    n->kind = Node::Kind::and_;
    expect_type(*first, Type::boolean, peek().pos);
    n->kids.push_back(first);
    while (keyword("and")) {
      auto pos = take().pos;
      auto k = parse_unary();
      expect_type(*k, Type::boolean, pos);
      n->kids.push_back(k);
    }
    return n;
  }

  NodePtr parse_unary() {
    if (keyword("not")) {
      auto pos = take().pos;
      auto k = parse_unary();
      expect_type(*k, Type::boolean, pos);
      auto n = std::make_shared<Node>();
      n->kind = Node::Kind::not_;
      n->kids.push_back(k);
      return n;
    }
    return parse_compare();
  }

  Value literal_value() {
    Token t = take();
    switch (t.kind) {
      case Tok::number: return t.number;
      case Tok::string: return t.text;
      case Tok::ident:
        if (t.text == "true") return true;
        if (t.text == "false") return false;
        break;
      default: break;
    }
    syntax("expected a literal", t.pos);
  }

  NodePtr parse_compare() {
    auto lhs = parse_operand();
    if (peek().kind == Tok::op) {
      Token op = take();
      auto rhs = parse_operand();
      if (op.op == Op::eq || op.op == Op::ne) {
        if (lhs->type != rhs->type) {
          syntax("cannot compare " + std::string(type_name(lhs->type)) + " with " +
                     std::string(type_name(rhs->type)),
                 op.pos);
        }
      } else {
        expect_type(*lhs, Type::number, op.pos);
        expect_type(*rhs, Type::number, op.pos);
      }
      auto n = std::make_shared<Node>();
      n->kind = Node::Kind::compare;
      n->op = op.op;
      n->kids = {lhs, rhs};
      return n;
    }
    if (keyword("in")) {
      auto pos = take().pos;
      if (peek().kind == Tok::clock) {
        expect_type(*lhs, Type::number, pos);
        auto n = std::make_shared<Node>();
        n->kind = Node::Kind::in_clock;
        n->from = take().number;
        if (peek().kind != Tok::dots) syntax("expected '..'", peek().pos);
        take();
        if (peek().kind != Tok::clock) syntax("expected HH:MM", peek().pos);
        n->to = take().number;
        n->kids = {lhs};
        return n;
      }
      if (peek().kind != Tok::lbracket) syntax("expected '[' or HH:MM after 'in'", peek().pos);
      take();
      auto n = std::make_shared<Node>();
      n->kind = Node::Kind::in_list;
      n->kids = {lhs};
      while (true) {
        auto lpos = peek().pos;
        Value v = literal_value();
        if (type_of(v) != lhs->type) syntax("list element type does not match", lpos);
        n->list.push_back(v);
        if (peek().kind == Tok::comma) {
          take();
          continue;
        }
        if (peek().kind != Tok::rbracket) syntax("expected ',' or ']'", peek().pos);
        take();
        break;
      }
      return n;
    }
    return lhs;
  }

  NodePtr parse_operand() {
    Token t = peek();
    auto n = std::make_shared<Node>();
    switch (t.kind) {
      case Tok::lparen: {
        take();
        auto inner = parse_or();
        if (peek().kind != Tok::rparen) syntax("expected ')'", peek().pos);
        take();
        return inner;
      }
      case Tok::number:
      case Tok::string:
        n->kind = Node::Kind::literal;
        n->literal = literal_value();
        n->type = type_of(n->literal);
        return n;
      case Tok::param: {
        take();
        if (!schema_.params.contains(t.text)) {
          throw Error(Errc::unknown_parameter, "unknown parameter $" + t.text);
        }
        n->kind = Node::Kind::param;
        n->name = t.text;
        n->type = Type::number;
        if (std::find(params.begin(), params.end(), t.text) == params.end()) params.push_back(t.text);
        return n;
      }
      case Tok::ident: {
        if (t.text == "true" || t.text == "false") {
          n->kind = Node::Kind::literal;
          n->literal = literal_value();
          n->type = Type::boolean;
          return n;
        }
        if (t.text == "and" || t.text == "or" || t.text == "not" || t.text == "in") {
          syntax("unexpected keyword '" + t.text + "'", t.pos);
        }
        take();
        if (t.text.rfind("device.", 0) == 0) {
          auto dev = t.text.substr(7);
          if (std::find(schema_.devices.begin(), schema_.devices.end(), dev) == schema_.devices.end()) {
            throw Error(Errc::unknown_device, "unknown device '" + dev + "'");
          }
          n->kind = Node::Kind::device;
          n->name = dev;
          n->type = Type::string;
        } else {
          auto it = schema_.fields.find(t.text);
          if (it == schema_.fields.end()) throw Error(Errc::unknown_field, "unknown field '" + t.text + "'");
          n->kind = Node::Kind::field;
          n->name = t.text;
          n->type = it->second;
        }
        if (std::find(fields.begin(), fields.end(), t.text) == fields.end()) fields.push_back(t.text);
        return n;
      }
      default:
        syntax(t.kind == Tok::end ? "unexpected end of expression" : "unexpected '" + t.text + "'", t.pos);
    }
  }

  std::vector<Token> toks_;
  std::size_t i_ = 0;
  const Schema& schema_;
};

struct Evaluator {
  const Context& ctx;
  const Params& params;

  Value operand(const Node& n) const {
    switch (n.kind) {
      case Node::Kind::literal: return n.literal;
      case Node::Kind::field: {
        auto v = ctx.field(n.name);
        if (!v) throw Error(Errc::unknown_field, "no value for field '" + n.name + "'");
        return *v;
      }
      case Node::Kind::device: {
        auto v = ctx.device(n.name);
        return v ? *v : std::string("unknown");
      }
      case Node::Kind::param: {
        auto it = params.find(n.name);
        if (it == params.end()) throw Error(Errc::unknown_parameter, "no value for $" + n.name);
        return it->second;
      }
      default: return test(n).value;
    }
  }

  static bool constant(const Node& n) { return n.kind == Node::Kind::literal || n.kind == Node::Kind::param; }

  Outcome test(const Node& n) const {
    switch (n.kind) {
      case Node::Kind::and_: {
        Outcome out{true, std::nullopt};
        for (const auto& k : n.kids) {
          auto o = test(*k);
          if (!o.value) return {false, std::nullopt};
          if (o.slack) out.slack = out.slack ? std::min(*out.slack, *o.slack) : *o.slack;
        }
        return out;
      }
      case Node::Kind::or_: {
        for (const auto& k : n.kids) {
          auto o = test(*k);
          if (o.value) return o;
        }
        return {false, std::nullopt};
      }
      case Node::Kind::not_: return {!test(*n.kids[0]).value, std::nullopt};
      case Node::Kind::compare: {
        Value a = operand(*n.kids[0]);
        Value b = operand(*n.kids[1]);
        if (n.op == Op::eq) return {a == b, std::nullopt};
        if (n.op == Op::ne) return {a != b, std::nullopt};
        double x = std::get<double>(a), y = std::get<double>(b);
        bool r = n.op == Op::lt ? x < y : n.op == Op::le ? x <= y : n.op == Op::gt ? x > y : x >= y;
        if (!r) return {false, std::nullopt};
        // Margin relative to the constant side, when there is one.
        double threshold = constant(*n.kids[0]) && !constant(*n.kids[1]) ? x : y;
        double margin = std::abs(x - y);
        double slack = std::abs(threshold) < 1e-12 ? std::numeric_limits<double>::infinity() : margin / std::abs(threshold);
        return {true, slack};
      }
      case Node::Kind::in_list: {
        Value a = operand(*n.kids[0]);
        return {std::find(n.list.begin(), n.list.end(), a) != n.list.end(), std::nullopt};
      }
      case Node::Kind::in_clock: {
        double t = std::fmod(std::get<double>(operand(*n.kids[0])), 86400.0);
        if (t < 0) t += 86400.0;
        bool r = n.from <= n.to ? (t >= n.from && t < n.to) : (t >= n.from || t < n.to);
        return {r, std::nullopt};
      }
      default: {
        Value v = operand(n);
        return {std::get<bool>(v), std::nullopt};
      }
    }
  }
};

}  // namespace

Predicate Predicate::compile(std::string_view text, const Schema& schema) {
  Parser p(lex(text), schema);
  Predicate out;
  out.root_ = p.parse();
  out.text_ = std::string(text);
  out.defaults_ = schema.params;
  out.params_ = std::move(p.params);
  out.fields_ = std::move(p.fields);
  return out;
}

Outcome Predicate::evaluate(const Context& ctx) const { return evaluate(ctx, defaults_); }

Outcome Predicate::evaluate(const Context& ctx, const Params& params) const {
  if (!root_) throw Error(Errc::parse_error, "predicate was never compiled");
  return Evaluator{ctx, params}.test(*root_);
}

}  // namespace shf::predicate
