#include <cmath>

#include "shf/predicate.hpp"
#include "support.hpp"

using namespace shf;
using namespace shf::predicate;

namespace {

Schema schema() {
  Schema s;
  s.fields = {{"speed", Type::number},  {"posture", Type::string}, {"night", Type::boolean},
              {"time_of_day", Type::number}, {"temperature", Type::number}};
  s.devices = {"stove", "tv"};
  s.params = {{"temp_high", 26.0}};
  return s;
}

MapContext ctx(double speed = 0.2, std::string posture = "standing", bool night = false) {
  MapContext c;
  c.fields = {{"speed", speed}, {"posture", posture}, {"night", night}, {"time_of_day", 12 * 3600.0}, {"temperature", 27.0}};
  c.devices = {{"stove", "on"}, {"tv", "off"}};
  return c;
}

bool eval(std::string_view text, const Context& c) { return Predicate::compile(text, schema()).evaluate(c).value; }

}  // namespace

TEST_CASE("basic evaluation") {
  auto c = ctx();
  CHECK(eval("speed < 0.45", c));
  CHECK_FALSE(eval("speed >= 0.45", c));
  CHECK(eval("posture == \"standing\" and not night", c));
  CHECK(eval("night or device.stove == \"on\"", c));
  CHECK_FALSE(eval("(night or speed > 1) and device.tv == \"off\"", c));
  CHECK(eval("posture in [\"sitting\", \"standing\"]", c));
  CHECK_FALSE(eval("posture in [\"lying\"]", c));
  CHECK(eval("night == false", c));
  CHECK(eval("temperature > $temp_high", c));
}

TEST_CASE("and binds tighter than or") {
  auto c = ctx();
  CHECK(eval("speed > 1 and night or device.stove == \"on\"", c));
  CHECK_FALSE(eval("speed > 1 and (night or device.stove == \"on\")", c));
}

TEST_CASE("compile errors are typed") {
  auto s = schema();
  CHECK(test::error_code_of([&] { Predicate::compile("height > 1", s); }) == Errc::unknown_field);
  CHECK(test::error_code_of([&] { Predicate::compile("device.oven == \"on\"", s); }) == Errc::unknown_device);
  CHECK(test::error_code_of([&] { Predicate::compile("speed > $nope", s); }) == Errc::unknown_parameter);
  CHECK(test::error_code_of([&] { Predicate::compile("posture > 1", s); }) == Errc::parse_error);
  CHECK(test::error_code_of([&] { Predicate::compile("speed == \"fast\"", s); }) == Errc::parse_error);
  CHECK(test::error_code_of([&] { Predicate::compile("speed", s); }) == Errc::parse_error);
  CHECK(test::error_code_of([&] { Predicate::compile("speed < ", s); }) == Errc::parse_error);
  CHECK(test::error_code_of([&] { Predicate::compile("(night", s); }) == Errc::parse_error);
  CHECK(test::error_code_of([&] { Predicate::compile("night night", s); }) == Errc::parse_error);
  CHECK(test::error_code_of([&] { Predicate::compile("posture in [1]", s); }) == Errc::parse_error);
  CHECK(test::error_code_of([&] { Predicate::compile("time_of_day in 25:00..06:00", s); }) == Errc::parse_error);
  CHECK(test::error_code_of([&] { Predicate::compile("", s); }) == Errc::parse_error);
}

TEST_CASE("missing field at evaluation time") {
  MapContext c;
  auto p = Predicate::compile("speed > 1", schema());
  CHECK(test::error_code_of([&] { p.evaluate(c); }) == Errc::unknown_field);
}

TEST_CASE("unset device reads as unknown") {
  MapContext c = ctx();
  c.devices.clear();
  CHECK(eval("device.stove == \"unknown\"", c));
}

TEST_CASE("clock ranges wrap past midnight") {
  auto p = Predicate::compile("time_of_day in 22:00..06:00", schema());
  auto at = [&](double h) {
    MapContext c = ctx();
    c.fields["time_of_day"] = h * 3600.0;
    return p.evaluate(c).value;
  };
  CHECK(at(22.0));
  CHECK(at(23.5));
  CHECK(at(0.0));
  CHECK(at(5.99));
  CHECK_FALSE(at(6.0));
  CHECK_FALSE(at(12.0));
  CHECK_FALSE(at(21.99));
  CHECK(at(24.0 + 23.0));  // wraps by day

  auto day = Predicate::compile("time_of_day in 08:00..18:00", schema());
  MapContext c = ctx();
  CHECK(day.evaluate(c).value);
  c.fields["time_of_day"] = 18 * 3600.0;
  CHECK_FALSE(day.evaluate(c).value);
  CHECK(parse_clock("06:30") == 6.5 * 3600.0);
}

TEST_CASE("slack is the smallest relative margin") {
  auto c = ctx(0.9);
  auto o = Predicate::compile("speed >= 0.45", schema()).evaluate(c);
  REQUIRE(o.slack);
  CHECK(*o.slack == doctest::Approx(1.0));  // (0.9 - 0.45) / 0.45

  o = Predicate::compile("speed >= 0.45 and speed < 1.0", schema()).evaluate(c);
  REQUIRE(o.slack);
  CHECK(*o.slack == doctest::Approx(0.1));

  o = Predicate::compile("0.45 <= speed", schema()).evaluate(c);
  REQUIRE(o.slack);
  CHECK(*o.slack == doctest::Approx(1.0));

  o = Predicate::compile("posture == \"standing\"", schema()).evaluate(c);
  CHECK(o.value);
  CHECK_FALSE(o.slack);

  o = Predicate::compile("speed > 0", schema()).evaluate(c);
  REQUIRE(o.slack);
  CHECK(std::isinf(*o.slack));

  o = Predicate::compile("speed < 0.45", schema()).evaluate(c);
  CHECK_FALSE(o.value);
  CHECK_FALSE(o.slack);
}

TEST_CASE("parameters can be overridden per evaluation") {
  auto p = Predicate::compile("temperature > $temp_high", schema());
  CHECK(p.params() == std::vector<std::string>{"temp_high"});
  auto c = ctx();
  CHECK(p.evaluate(c).value);
  CHECK_FALSE(p.evaluate(c, {{"temp_high", 28.0}}).value);
  CHECK(test::error_code_of([&] { p.evaluate(c, {}); }) == Errc::unknown_parameter);
}

TEST_CASE("referenced names are reported") {
  auto p = Predicate::compile("speed > 1 and device.tv == \"on\"", schema());
  CHECK(std::find(p.fields().begin(), p.fields().end(), "speed") != p.fields().end());
  CHECK(std::find(p.fields().begin(), p.fields().end(), "device.tv") != p.fields().end());
}
