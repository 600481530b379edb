#include "ctxr/flow.hpp"

#include <doctest.h>

#include <random>

using namespace ctxr;

namespace {

std::vector<TypedRecord> recs(std::initializer_list<const char*> lines) {
  std::vector<TypedRecord> out;
  for (const char* l : lines) out.push_back(parse_text(l));
  return out;
}

}  // namespace

TEST_CASE("parse S7 pipeline") {
  auto p = Pipeline::parse(
      "rename watt:=power | shape(this, <{watt:float64}>) | cut watt,event_ts,from");
  REQUIRE(p.stages().size() == 3);
  CHECK(std::holds_alternative<stage::Rename>(p.stages()[0]));
  CHECK(std::holds_alternative<stage::Shape>(p.stages()[1]));
  CHECK(std::holds_alternative<stage::Cut>(p.stages()[2]));
  CHECK(Pipeline::parse(p.to_string()) == p);
}

TEST_CASE("parse empty and head/sort forms") {
  CHECK(Pipeline::parse("").stages().empty());
  CHECK(Pipeline::parse("   ").stages().empty());

  auto p = Pipeline::parse("sort occupancy | head");
  REQUIRE(p.stages().size() == 2);
  auto& s = std::get<stage::Sort>(p.stages()[0]);
  CHECK(s.field == "occupancy");
  CHECK_FALSE(s.descending);
  CHECK(std::get<stage::Head>(p.stages()[1]).n == 1);

  auto pr = Pipeline::parse("sort -r watt | head 3");
  CHECK(std::get<stage::Sort>(pr.stages()[0]).descending);
  CHECK(std::get<stage::Head>(pr.stages()[1]).n == 3);
}

TEST_CASE("parse round-trips assorted pipelines") {
  for (const char* text : {
           "where (watt > 80.5) and has(unit)",
           "where has(<watt:string>) or unit == \"watt\"",
           "put occupancy := (a + b) / 2",
           "avg(x),count(),min(y) by room,floor",
           "cut a,b,c | head 2",
           "log(\"alerts\")",
           "reject(\"unmatched\")",
           "drop(\"noise\")",
           "where ts > 2026-01-02T03:04:05Z",
       }) {
    auto p = Pipeline::parse(text);
    CHECK(Pipeline::parse(p.to_string()) == p);
  }
}

TEST_CASE("parse errors are positioned") {
  CHECK_THROWS_AS(Pipeline::parse("bogus x"), parse_error);
  CHECK_THROWS_AS(Pipeline::parse("cut"), parse_error);
  CHECK_THROWS_AS(Pipeline::parse("where x >"), parse_error);
  CHECK_THROWS_AS(Pipeline::parse("head 0"), parse_error);
  CHECK_THROWS_AS(Pipeline::parse("avg(x) | head"), parse_error);
  CHECK_THROWS_AS(Pipeline::parse("where x | "), parse_error);
}

TEST_CASE("S7 records through the S7 pipeline") {
  auto p = Pipeline::parse(
      "rename watt:=power | shape(this, <{watt:float64}>) | cut watt,event_ts,from");
  auto input = recs({
      "{watt:\"80\",from:\"biolab\",event_ts:2026-01-01T00:00:01Z,ts:2026-01-01T00:00:02Z}",
      "{watt:null,from:\"office\",event_ts:2026-01-01T00:00:03Z,ts:2026-01-01T00:00:04Z}",
      "{power:120.,unit:\"watt\",from:\"lounge\",event_ts:2026-01-01T00:00:05Z,ts:2026-01-01T00:00:06Z}",
  });
  EvalReport report;
  auto out = eval(p, input, &report);
  REQUIRE(out.size() == 3);
  CHECK(report.rejected == 0);
  for (const auto& r : out) {
    REQUIRE(r.arity() == 3);
    CHECK(r.schema().fields()[0].first == "watt");
    CHECK(r.schema().fields()[1].first == "event_ts");
    CHECK(r.schema().fields()[2].first == "from");
    CHECK(r.type_of("watt")->kind() == TypeKind::Float64);
  }
  CHECK(out[0].find("watt")->as_float() == 80.0);
  CHECK(out[1].find("watt")->is_null());
  CHECK(out[2].find("watt")->as_float() == 120.0);
  CHECK(out[0].find("from")->as_string() == "biolab");
}

TEST_CASE("identity pipeline returns input unchanged") {
  auto input = recs({"{a:1}", "{b:\"x\"}"});
  CHECK(eval(Pipeline::parse(""), input) == input);
}

TEST_CASE("avg over occupancy values") {
  auto out = eval(Pipeline::parse("avg(occupancy)"),
                  recs({"{occupancy:0.5}", "{occupancy:1.0}"}));
  REQUIRE(out.size() == 1);
  CHECK(out[0].find("avg")->as_float() == 0.75);
}

TEST_CASE("aggregates skip nulls, count counts all") {
  auto input = recs({"{watt:80.}", "{watt:null}", "{watt:120.}"});
  auto out = eval(Pipeline::parse("avg(watt),sum(watt),count(),min(watt),max(watt)"),
                  input);
  REQUIRE(out.size() == 1);
  CHECK(out[0].find("avg")->as_float() == 100.0);
  CHECK(out[0].find("sum")->as_float() == 200.0);
  CHECK(out[0].find("count")->as_int() == 3);
  CHECK(out[0].find("min")->as_float() == 80.0);
  CHECK(out[0].find("max")->as_float() == 120.0);
}

TEST_CASE("mixed int/float aggregation promotes to float") {
  auto out = eval(Pipeline::parse("sum(x)"), recs({"{x:1}", "{x:2.5}"}));
  CHECK(out[0].find("sum")->is_float());
  CHECK(out[0].find("sum")->as_float() == 3.5);
  // All-int stays int.
  auto out2 = eval(Pipeline::parse("sum(x)"), recs({"{x:1}", "{x:2}"}));
  CHECK(out2[0].find("sum")->is_int());
  CHECK(out2[0].find("sum")->as_int() == 3);
}

TEST_CASE("aggregate over empty input emits nothing") {
  CHECK(eval(Pipeline::parse("count()"), {}).empty());
  CHECK(eval(Pipeline::parse("avg(x)"), {}).empty());
}

TEST_CASE("group-by aggregates") {
  auto input = recs({"{room:\"a\",x:1.}", "{room:\"b\",x:3.}", "{room:\"a\",x:2.}"});
  auto out = eval(Pipeline::parse("avg(x),count() by room"), input);
  REQUIRE(out.size() == 2);
  CHECK(out[0].find("room")->as_string() == "a");  // first-seen order
  CHECK(out[0].find("avg")->as_float() == 1.5);
  CHECK(out[0].find("count")->as_int() == 2);
  CHECK(out[1].find("room")->as_string() == "b");
  CHECK(out[1].find("avg")->as_float() == 3.0);
}

TEST_CASE("cut output is exactly the requested fields; missing rejects") {
  EvalReport report;
  auto out = eval(Pipeline::parse("cut b,a"),
                  recs({"{a:1,b:2,c:3}", "{a:9}"}), &report);
  REQUIRE(out.size() == 1);
  CHECK(serialize_text(out[0]) == "{b:2,a:1}");
  CHECK(report.rejected == 1);
  CHECK(report.rejects_by_reason.at("cut-missing-field") == 1);
}

TEST_CASE("sort is stable, missing keys last, -r reverses distinct keys") {
  auto input = recs({"{x:3,id:1}", "{id:2}", "{x:1,id:3}", "{x:3,id:4}",
                     "{x:null,id:5}"});
  auto out = eval(Pipeline::parse("sort x"), input);
  REQUIRE(out.size() == 5);
  CHECK(out[0].find("id")->as_int() == 3);
  CHECK(out[1].find("id")->as_int() == 1);  // ties keep input order
  CHECK(out[2].find("id")->as_int() == 4);
  CHECK(out[3].find("id")->as_int() == 2);  // keyless after keyed
  CHECK(out[4].find("id")->as_int() == 5);

  auto distinct = recs({"{x:2}", "{x:9}", "{x:5}"});
  auto asc = eval(Pipeline::parse("sort x"), distinct);
  auto desc = eval(Pipeline::parse("sort -r x"), distinct);
  REQUIRE(asc.size() == desc.size());
  for (size_t i = 0; i < asc.size(); i++)
    CHECK(asc[i] == desc[desc.size() - 1 - i]);
}

TEST_CASE("shape casts listed fields only and never changes arity") {
  auto p = Pipeline::parse("shape(this, <{watt:float64}>)");
  EvalReport report;
  auto out = eval(p, recs({"{watt:\"80\",unit:\"watt\"}", "{watt:\"oops\"}",
                           "{other:1}"}),
                  &report);
  REQUIRE(out.size() == 2);
  CHECK(out[0].arity() == 2);
  CHECK(out[0].find("watt")->as_float() == 80.0);
  CHECK(out[0].find("unit")->as_string() == "watt");  // unlisted untouched
  CHECK(out[1].arity() == 1);                          // listed-but-absent skipped
  CHECK(report.rejects_by_reason.at("shape-unconvertible") == 1);
}

TEST_CASE("put evaluates expressions; division by zero yields null") {
  auto out = eval(Pipeline::parse("put r := a / b"),
                  recs({"{a:6,b:2}", "{a:1,b:0}"}));
  REQUIRE(out.size() == 2);
  CHECK(out[0].find("r")->as_float() == 3.0);
  CHECK(out[1].find("r")->is_null());
}

TEST_CASE("where filters; type errors reject per record") {
  EvalReport report;
  auto out = eval(Pipeline::parse("where x > 1"),
                  recs({"{x:2}", "{x:0}", "{x:\"s\"}", "{y:9}"}), &report);
  REQUIRE(out.size() == 1);
  CHECK(out[0].find("x")->as_int() == 2);
  // {x:"s"}: string > int is a type error; {y:9}: missing x compares null.
  CHECK(report.rejected == 1);
}

TEST_CASE("has() predicates") {
  auto out = eval(Pipeline::parse("where has(<watt:string>)"),
                  recs({"{watt:\"80\"}", "{watt:80.}", "{power:1}"}));
  REQUIRE(out.size() == 1);
  CHECK(out[0].find("watt")->as_string() == "80");

  auto out2 = eval(Pipeline::parse("where has(watt)"),
                   recs({"{watt:\"80\"}", "{watt:80.}", "{power:1}"}));
  CHECK(out2.size() == 2);
}

TEST_CASE("log sink consumes records into the report") {
  EvalReport report;
  auto out = eval(Pipeline::parse("where x > 0 | log(\"hits\")"),
                  recs({"{x:1}", "{x:-1}", "{x:2}"}), &report);
  CHECK(out.empty());
  REQUIRE(report.logged.size() == 2);
  CHECK(report.logged[0].first == "hits");
  CHECK(report.logged[0].second.find("x")->as_int() == 1);
}

TEST_CASE("incremental running aggregates") {
  IncrementalEval inc(Pipeline::parse("avg(x)"));
  auto out1 = inc.push(recs({"{x:1.}"}));
  REQUIRE(out1.size() == 1);
  CHECK(out1[0].find("avg")->as_float() == 1.0);
  auto out2 = inc.push(recs({"{x:3.}"}));
  REQUIRE(out2.size() == 1);
  CHECK(out2[0].find("avg")->as_float() == 2.0);
}

TEST_CASE("incremental identity passes batches through") {
  IncrementalEval inc(Pipeline::parse(""));
  auto batch = recs({"{a:1}", "{b:2}"});
  CHECK(inc.push(batch) == batch);
}

TEST_CASE("incremental where equals one-shot on concatenation") {
  std::mt19937_64 rng(42);
  auto p = Pipeline::parse("where x > 0");
  for (int trial = 0; trial < 20; trial++) {
    std::vector<TypedRecord> all;
    for (int i = 0; i < 40; i++) {
      all.push_back(TypedRecord::make(
          {{"x", Value::integer(int64_t(rng() % 21) - 10)},
           {"id", Value::integer(i)}}));
    }
    IncrementalEval inc(p);
    std::vector<TypedRecord> streamed;
    size_t pos = 0;
    while (pos < all.size()) {
      size_t len = 1 + rng() % 7;
      len = std::min(len, all.size() - pos);
      std::vector<TypedRecord> batch(all.begin() + pos, all.begin() + pos + len);
      pos += len;
      auto out = inc.push(std::move(batch));
      streamed.insert(streamed.end(), out.begin(), out.end());
    }
    CHECK(streamed == eval(p, all));
  }
}

TEST_CASE("incremental partition equivalence for aggregate pipelines") {
  // Final snapshot of a partitioned stream equals one-shot eval.
  std::mt19937_64 rng(7);
  auto p = Pipeline::parse("where x >= 0 | sum(x),count() by k");
  std::vector<TypedRecord> all;
  for (int i = 0; i < 60; i++) {
    all.push_back(TypedRecord::make(
        {{"k", Value::string(rng() % 2 ? "a" : "b")},
         {"x", Value::integer(int64_t(rng() % 13) - 2)}}));
  }
  IncrementalEval inc(p);
  std::vector<TypedRecord> last;
  size_t pos = 0;
  while (pos < all.size()) {
    size_t len = std::min<size_t>(1 + rng() % 9, all.size() - pos);
    auto out = inc.push({all.begin() + pos, all.begin() + pos + len});
    pos += len;
    if (!out.empty()) last = out;
  }
  CHECK(last == eval(p, all));
}

TEST_CASE("warm rebuilds aggregate state without emitting") {
  IncrementalEval inc(Pipeline::parse("sum(x)"));
  inc.warm(recs({"{x:5}", "{x:7}"}));
  auto out = inc.push(recs({"{x:1}"}));
  REQUIRE(out.size() == 1);
  CHECK(out[0].find("sum")->as_int() == 13);
}

TEST_CASE("qcx") {
  CHECK(qcx({"BioHall@occupancy"}, Pipeline::parse("avg(occupancy)")) == 3);
  CHECK(qcx({}, Pipeline::parse("")) == 0);
  CHECK(qcx({"A@e1", "B@e2"}, Pipeline::parse("sort f | head")) == 6);
  // Each aggregate function counts as one operator.
  CHECK(qcx({"X@e"}, Pipeline::parse("avg(a),count()")) == 4);
}

TEST_CASE("head default and global streaming semantics") {
  auto out = eval(Pipeline::parse("head"), recs({"{a:1}", "{a:2}"}));
  REQUIRE(out.size() == 1);
  CHECK(out[0].find("a")->as_int() == 1);

  IncrementalEval inc(Pipeline::parse("head 3"));
  CHECK(inc.push(recs({"{a:1}", "{a:2}"})).size() == 2);
  CHECK(inc.push(recs({"{a:3}", "{a:4}"})).size() == 1);
  CHECK(inc.push(recs({"{a:5}"})).empty());
}
