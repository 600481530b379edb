#include "ctxr/record.hpp"

#include <doctest.h>

#include <random>

using namespace ctxr;

TEST_CASE("parse basic records") {
  auto r = parse_text("{room_energy:80,unit:\"watt\"}");
  REQUIRE(r.arity() == 2);
  CHECK(r.find("room_energy")->as_int() == 80);
  CHECK(r.find("unit")->as_string() == "watt");
  CHECK(r.type_of("room_energy")->kind() == TypeKind::Int64);

  auto empty = parse_text("{}");
  CHECK(empty.arity() == 0);
  CHECK(empty.schema().fields().empty());

  auto f = parse_text("{power:120.,unit:\"watt\"}");
  CHECK(f.find("power")->is_float());
  CHECK(f.find("power")->as_float() == 120.0);
}

TEST_CASE("parse accepts both trailing-dot and full decimal floats") {
  CHECK(parse_text("{x:120.}").find("x")->as_float() == 120.0);
  CHECK(parse_text("{x:120.0}").find("x")->as_float() == 120.0);
  CHECK(parse_text("{x:1e3}").find("x")->as_float() == 1000.0);
  CHECK(parse_text("{x:-2.5e-2}").find("x")->as_float() == -0.025);
}

TEST_CASE("canonical serialization") {
  auto r = TypedRecord::make({{"watt", Value::floating(80.0)}});
  CHECK(serialize_text(r) == "{watt:80.}");

  auto arr = TypedRecord::make(
      {{"from", Value::array({Value::string("biolab"), Value::string("lounge")})}});
  CHECK(serialize_text(arr) == "{from:[\"biolab\",\"lounge\"]}");

  auto ts = parse_rfc3339("2026-08-10T05:00:00.5Z");
  REQUIRE(ts.has_value());
  auto tr = TypedRecord::make({{"ts", Value::time(*ts)}});
  CHECK(serialize_text(tr) == "{ts:2026-08-10T05:00:00.5Z}");
}

TEST_CASE("timestamps are bare tokens, UTC normalized") {
  auto r = parse_text("{t:2024-01-02T03:04:05.123456789Z}");
  CHECK(r.type_of("t")->kind() == TypeKind::Time);
  // Offset form normalizes to the same instant.
  auto r2 = parse_text("{t:2024-01-02T04:04:05.123456789+01:00}");
  CHECK(r.find("t")->as_time() == r2.find("t")->as_time());
  CHECK(serialize_text(r2) == "{t:2024-01-02T03:04:05.123456789Z}");
  // Trailing fractional zeros trimmed.
  auto r3 = parse_text("{t:2024-01-02T03:04:05.100Z}");
  CHECK(serialize_text(r3) == "{t:2024-01-02T03:04:05.1Z}");
}

TEST_CASE("syntax errors carry positions") {
  CHECK_THROWS_AS(parse_text("{a:}"), parse_error);
  CHECK_THROWS_AS(parse_text("{a:1,}"), parse_error);
  CHECK_THROWS_AS(parse_text("{a:1"), parse_error);
  CHECK_THROWS_AS(parse_text("{a:1}x"), parse_error);
  CHECK_THROWS_AS(parse_text("{a:1,a:2}"), parse_error);
  try {
    parse_text("{a:@}");
    FAIL("expected parse_error");
  } catch (const parse_error& e) {
    CHECK(e.pos() == 3);
  }
}

TEST_CASE("heterogeneous arrays rejected") {
  CHECK_THROWS_AS(parse_text("{a:[1,\"x\"]}"), parse_error);
  // Nulls may mix with any element type.
  auto r = parse_text("{a:[1,null,3]}");
  CHECK(r.find("a")->as_array().size() == 3);
}

TEST_CASE("nested records") {
  auto r = parse_text("{outer:{inner:1,s:\"x\"},n:2}");
  const auto& inner = r.find("outer")->as_record();
  CHECK(inner.find("inner")->as_int() == 1);
  CHECK(serialize_text(r) == "{outer:{inner:1,s:\"x\"},n:2}");
}

TEST_CASE("string escapes round-trip") {
  auto r = parse_text(R"({s:"a\"b\\c\nd\te\u0001"})");
  CHECK(r.find("s")->as_string() == std::string("a\"b\\c\nd\te\x01"));
  CHECK(parse_text(serialize_text(r)) == r);
}

TEST_CASE("fingerprints") {
  auto a1 = parse_text("{a:1,b:\"x\"}");
  auto a2 = parse_text("{a:99,b:\"y\"}");
  CHECK(fingerprint(a1.schema()) == fingerprint(a2.schema()));

  auto ai = parse_text("{a:1}");
  auto af = parse_text("{a:1.}");
  CHECK(fingerprint(ai.schema()) != fingerprint(af.schema()));

  // Order-sensitive: canonical strings differ.
  auto ab = parse_text("{a:1,b:\"x\"}");
  auto ba = parse_text("{b:\"x\",a:1}");
  CHECK(ab.schema().to_string() == "{a:int64,b:string}");
  CHECK(ba.schema().to_string() == "{b:string,a:int64}");
  CHECK(fingerprint(ab.schema()) != fingerprint(ba.schema()));
}

TEST_CASE("heterogeneous record-lines coexist with no registry") {
  auto recs = parse_lines(
      "{room_energy:80,unit:\"watt\"}\n"
      "{room_occupancy:0.5,from:[\"biolab1\",\"lounge\"]}\n"
      "\n"
      "{door:true}\n");
  REQUIRE(recs.size() == 3);
  CHECK(recs[0].schema() != recs[1].schema());
  CHECK(parse_lines(serialize_lines(recs)) == recs);
}

TEST_CASE("cast_value conversions") {
  auto f64 = DataType::scalar(TypeKind::Float64);
  auto i64 = DataType::scalar(TypeKind::Int64);
  auto str = DataType::scalar(TypeKind::String);
  auto bl = DataType::scalar(TypeKind::Bool);

  CHECK(cast_value(Value::string("80"), f64)->as_float() == 80.0);
  CHECK(cast_value(Value::null(), f64)->is_null());
  CHECK(cast_value(Value::null(), str)->is_null());
  CHECK_FALSE(cast_value(Value::string("watt"), f64).has_value());

  CHECK(cast_value(Value::integer(3), f64)->as_float() == 3.0);
  CHECK(cast_value(Value::string("-42"), i64)->as_int() == -42);
  CHECK_FALSE(cast_value(Value::string("4.2"), i64).has_value());
  CHECK(cast_value(Value::integer(7), str)->as_string() == "7");
  CHECK(cast_value(Value::floating(80.0), str)->as_string() == "80.");
  CHECK(cast_value(Value::boolean(true), str)->as_string() == "true");
  CHECK(cast_value(Value::string("false"), bl)->as_bool() == false);
  CHECK_FALSE(cast_value(Value::string("yes"), bl).has_value());
  CHECK(cast_value(Value::boolean(true), f64)->as_float() == 1.0);
  CHECK(cast_value(Value::boolean(false), i64)->as_int() == 0);
  CHECK_FALSE(cast_value(Value::time({5}), f64).has_value());
}

TEST_CASE("cast_value is idempotent on matching variants") {
  std::vector<Value> vals = {Value::integer(5), Value::floating(2.5),
                             Value::string("x"), Value::boolean(true),
                             Value::time({123})};
  for (const auto& v : vals) {
    auto c = cast_value(v, v.type());
    REQUIRE(c.has_value());
    CHECK(*c == v);
  }
}

namespace {

// Fuzz generator over the value grammar for the round-trip property.
struct Gen {
  std::mt19937_64 rng;
  explicit Gen(uint64_t seed) : rng(seed) {}

  int pick(int n) { return int(rng() % n); }

  std::string ident() {
    static const char* names[] = {"a", "b", "watt", "from", "ts", "x_1", "_ctx"};
    return names[pick(7)];
  }

  Value scalar() {
    switch (pick(6)) {
      case 0: return Value::null();
      case 1: return Value::integer(int64_t(rng()) >> (pick(40)));
      case 2: {
        double d = double(int64_t(rng() % 2000000) - 1000000) /
                   double(1 + (rng() % 1000));
        return Value::floating(d);
      }
      case 3: {
        std::string s;
        int len = pick(8);
        for (int i = 0; i < len; i++)
          s += char("ab \"\\\n\tzZ9"[pick(10)]);
        return Value::string(s);
      }
      case 4: return Value::boolean(pick(2) == 0);
      default:
        return Value::time({int64_t(rng() % 4000000000000000000ll)});
    }
  }

  Value value(int depth) {
    int r = pick(depth > 0 ? 8 : 6);
    if (r < 6) return scalar();
    if (r == 6) {
      ValueArray arr;
      Value proto = scalar();
      while (proto.is_null() && pick(4) != 0) proto = scalar();
      int len = pick(4);
      for (int i = 0; i < len; i++) {
        if (pick(5) == 0) {
          arr.push_back(Value::null());
        } else if (proto.is_null()) {
          arr.push_back(Value::null());
        } else if (proto.is_int()) {
          arr.push_back(Value::integer(int64_t(rng() % 1000)));
        } else if (proto.is_float()) {
          arr.push_back(Value::floating(double(rng() % 1000) / 8.0));
        } else if (proto.is_string()) {
          arr.push_back(Value::string(ident()));
        } else if (proto.is_bool()) {
          arr.push_back(Value::boolean(pick(2) == 0));
        } else {
          arr.push_back(Value::time({int64_t(rng() % 1000000000000ll)}));
        }
      }
      return Value::array(std::move(arr));
    }
    return Value::record(record(depth - 1));
  }

  TypedRecord record(int depth) {
    std::vector<std::pair<std::string, Value>> fields;
    int n = pick(5);
    for (int i = 0; i < n; i++) {
      std::string name = ident() + std::to_string(i);
      fields.emplace_back(name, value(depth));
    }
    return TypedRecord::make(std::move(fields));
  }
};

}  // namespace

TEST_CASE("round-trip property over generated records") {
  Gen gen(0xC0FFEE);
  for (int i = 0; i < 500; i++) {
    TypedRecord r = gen.record(2);
    std::string text = serialize_text(r);
    TypedRecord back = parse_text(text);
    CHECK(back == r);
    CHECK(serialize_text(back) == text);
  }
}
