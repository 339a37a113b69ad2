#pragma once

// Small boolean expression language used by the Level 2 rule tables and the
// Level 3 decision rules.
//
//   expr    := and ("or" and)*
//   and     := unary ("and" unary)*
//   unary   := "not" unary | compare
//   compare := operand (op operand | "in" "[" literal ("," literal)* "]" | "in" HH:MM ".." HH:MM)?
//   operand := number | "string" | true | false | field | device.<name> | $param | "(" expr ")"
//   op      := == != < <= > >=
//
// Fields are declared up front with their types, so a compiled predicate is
// known to be well typed before it ever runs.

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "shf/common.hpp"

namespace shf::predicate {

enum class Type { number, string, boolean };
std::string_view type_name(Type t);

using Value = std::variant<double, std::string, bool>;

/// Names a predicate may reference.
struct Schema {
  std::map<std::string, Type, std::less<>> fields;
  /// Device names accepted after "device."; empty means "device." is not allowed.
  std::vector<std::string> devices;
  /// Parameters a predicate may reference as $name (all numeric).
  std::map<std::string, double, std::less<>> params;
};

/// Field values for one evaluation. Missing fields are an evaluation error.
class Context {
 public:
  virtual ~Context() = default;
  virtual std::optional<Value> field(std::string_view name) const = 0;
  virtual std::optional<std::string> device(std::string_view name) const = 0;
};

/// Context backed by plain maps; handy for tests and the Level 3 engine.
class MapContext : public Context {
 public:
  std::map<std::string, Value, std::less<>> fields;
  std::map<std::string, std::string, std::less<>> devices;
  std::optional<Value> field(std::string_view name) const override;
  std::optional<std::string> device(std::string_view name) const override;
};

struct Outcome {
  bool value = false;
  /// Smallest relative margin among the numeric comparisons that decided a
  /// true result; absent when no numeric comparison took part.
  std::optional<double> slack;
};

struct Node;

class Predicate {
 public:
  /// Parses and type-checks. Throws parse_error, unknown_field,
  /// unknown_device or unknown_parameter.
  static Predicate compile(std::string_view text, const Schema& schema);

  Outcome evaluate(const Context& ctx) const;
  /// Same structure evaluated with different $param values.
  Outcome evaluate(const Context& ctx, const std::map<std::string, double, std::less<>>& params) const;

  const std::string& text() const { return text_; }
  /// Every $param the expression references.
  const std::vector<std::string>& params() const { return params_; }
  /// Every field and device.<name> the expression references.
  const std::vector<std::string>& fields() const { return fields_; }

 private:
  std::string text_;
  std::shared_ptr<const Node> root_;
  std::map<std::string, double, std::less<>> defaults_;
  std::vector<std::string> params_;
  std::vector<std::string> fields_;
};

/// "HH:MM" to seconds since midnight.
double parse_clock(std::string_view hhmm);

}  // namespace shf::predicate
