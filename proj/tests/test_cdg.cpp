#include "ctxr/cdg.hpp"

#include <doctest.h>

#include "compose_fuzz.hpp"

using namespace ctxr;

namespace {

std::unique_ptr<ContextState> make_ctx(const std::string& yaml) {
  auto cfgs = ContextConfig::parse_yaml(yaml);
  REQUIRE(cfgs.size() == 1);
  return std::make_unique<ContextState>(std::move(cfgs[0]));
}

SourcingIntent intent(const std::string& text) {
  auto i = SourcingIntent::parse(text);
  REQUIRE(i.has_value());
  return *i;
}

Kind kind(const std::string& text) {
  auto k = Kind::parse(text);
  REQUIRE(k.has_value());
  return *k;
}

}  // namespace

TEST_CASE("match_kind") {
  CHECK(match_kind(intent("any@noise"), kind("cot.dev/v1/Building")));
  CHECK(match_kind(intent("vendor_x/*/phone@e"), kind("vendor_x/v2/phone")));
  CHECK_FALSE(match_kind(intent("a/b/c@e"), kind("a/b/d")));
  CHECK(match_kind(intent("a/b/c@e"), kind("a/b/c")));
  CHECK(match_kind(intent("*/*/phone@e"), kind("someone.else/v9/phone")));
  CHECK_FALSE(match_kind(intent("*/*/phone@e"), kind("someone.else/v9/lamp")));
  // Direct selectors bypass kind matching entirely.
  CHECK_FALSE(match_kind(intent("AlicePhone@e"), kind("a/b/c")));
}

TEST_CASE("intent_matches uses name for direct selectors") {
  ContextMeta meta{kind("apple.com/v1/iphone"), "AlicePhone", Role{"device"}};
  CHECK(intent_matches(intent("AlicePhone@noise"), meta));
  CHECK_FALSE(intent_matches(intent("BobPhone@noise"), meta));
  CHECK(intent_matches(intent("any@noise"), meta));
  CHECK(intent_matches(intent("apple.com/*/iphone@noise"), meta));
}

TEST_CASE("compile_injection follows the rule table") {
  std::vector<MatchActionRule> rules;
  rules.push_back({SchemaMatch::parse("has(<watt:string>)"),
                   RuleAction::parse("extract")});
  rules.push_back({SchemaMatch::parse("has(<power:string>)"),
                   RuleAction::parse("rename watt:=power")});
  rules.push_back({SchemaMatch::parse("*"), RuleAction::parse("reject")});

  Schema power_schema(
      {{"power", DataType::scalar(TypeKind::String)}});
  Schema watt_schema({{"watt", DataType::scalar(TypeKind::String)},
                      {"from", DataType::scalar(TypeKind::String)}});
  Schema humidity_schema({{"humidity", DataType::scalar(TypeKind::Float64)}});

  auto inj = compile_injection(rules, {power_schema, watt_schema, humidity_schema},
                               UnmatchedPolicy::Accept);

  CHECK(inj.prefix_for(power_schema).to_string() == "rename watt:=power");
  CHECK(inj.prefix_for(watt_schema).to_string() == "cut watt");
  CHECK(inj.prefix_for(humidity_schema).to_string() == "reject(\"rule-reject\")");
  // Wildcard also speaks for schemas unseen at join time.
  Schema novel({{"x", DataType::scalar(TypeKind::Int64)}});
  CHECK(inj.prefix_for(novel).to_string() == "reject(\"rule-reject\")");
}

TEST_CASE("empty rule list compiles to accept-as-is") {
  Schema s({{"a", DataType::scalar(TypeKind::Int64)}});
  auto inj = compile_injection({}, {s}, UnmatchedPolicy::Accept);
  CHECK(inj.prefix_for(s).empty());
  CHECK(inj.fallback.empty());
}

TEST_CASE("unmatched policy applies without a wildcard") {
  std::vector<MatchActionRule> rules;
  rules.push_back({SchemaMatch::parse("has(<watt:string>)"),
                   RuleAction::parse("extract")});
  Schema other({{"x", DataType::scalar(TypeKind::Bool)}});
  auto accept = compile_injection(rules, {other}, UnmatchedPolicy::Accept);
  CHECK(accept.prefix_for(other).empty());
  auto reject = compile_injection(rules, {other}, UnmatchedPolicy::Reject);
  CHECK(reject.prefix_for(other).to_string() == "reject(\"unmatched-schema\")");
}

TEST_CASE("rule actions render against the schema") {
  Schema s({{"a", DataType::scalar(TypeKind::Int64)},
            {"b", DataType::scalar(TypeKind::String)},
            {"c", DataType::scalar(TypeKind::Bool)}});
  SchemaMatch wild = SchemaMatch::parse("*");
  CHECK(compile_action(RuleAction::parse("trim(b)"), wild, s).to_string() ==
        "cut a,c");
  CHECK(compile_action(RuleAction::parse("trim(a,b,c)"), wild, s).to_string() ==
        "drop(\"trim-all\")");
  CHECK(compile_action(RuleAction::parse("log(\"seen\")"), wild, s).to_string() ==
        "log(\"seen\")");
  CHECK(compile_action(RuleAction::parse("convert(\"put c := a + 1\")"), wild, s)
            .to_string() == "put c := (a + 1)");
  CHECK(compile_action(RuleAction::parse("drop"), wild, s).to_string() ==
        "drop(\"rule-drop\")");
}

TEST_CASE("wildcard must be last") {
  std::vector<MatchActionRule> rules;
  rules.push_back({SchemaMatch::parse("*"), RuleAction::parse("reject")});
  rules.push_back({SchemaMatch::parse("has(<a:int64>)"),
                   RuleAction::parse("accept")});
  CHECK_THROWS_AS(validate_rules(rules), std::invalid_argument);
  CHECK_THROWS_AS(compile_injection(rules, {}, UnmatchedPolicy::Accept),
                  std::invalid_argument);
}

TEST_CASE("on_join resolves matching intents") {
  ContextMap contexts;
  contexts["Room"] = make_ctx(
      "kind: cot.dev/v1/Room\n"
      "name: Room\n"
      "ingress:\n"
      "  - name: noise_in\n"
      "    intent: [\"any@noise\"]\n");
  contexts["Phone"] = make_ctx(
      "kind: apple.com/v1/iphone\n"
      "name: Phone\n"
      "egress:\n"
      "  - name: noise\n");
  AssociationLog log;

  auto delta = on_join(contexts, log, "Phone", "Room", Timestamp{1});
  REQUIRE(delta.changes.size() == 1);
  CHECK(delta.changes[0].ctx == "Room");
  CHECK(delta.changes[0].ingress == "noise_in");
  REQUIRE(delta.changes[0].added.size() == 1);
  CHECK(delta.changes[0].added[0].label() == "Phone@noise");
  auto& state = contexts["Room"]->ingress_states["noise_in"];
  CHECK(state.sources.size() == 1);
  CHECK(state.restart_count == 1);

  SUBCASE("leave empties the sources again") {
    on_leave(contexts, log, "Phone", "Room", Timestamp{2});
    CHECK(state.sources.empty());
    CHECK(state.restart_count == 2);
    CHECK(snapshot_source_map(contexts) == resolve_all(contexts, log));
  }

  SUBCASE("duplicate open association rejected") {
    CHECK_THROWS_AS(on_join(contexts, log, "Phone", "Room", Timestamp{3}),
                    duplicate_association);
  }

  SUBCASE("rejoin after leave works") {
    on_leave(contexts, log, "Phone", "Room", Timestamp{2});
    on_join(contexts, log, "Phone", "Room", Timestamp{3});
    CHECK(state.sources.size() == 1);
  }
}

TEST_CASE("join with no matching egress changes nothing") {
  ContextMap contexts;
  contexts["Room"] = make_ctx(
      "kind: cot.dev/v1/Room\nname: Room\n"
      "ingress:\n  - name: in\n    intent: [\"any@noise\"]\n");
  contexts["Lamp"] = make_ctx(
      "kind: cot.dev/v1/Lamp\nname: Lamp\n"
      "egress:\n  - name: energy\n");
  AssociationLog log;
  auto delta = on_join(contexts, log, "Lamp", "Room", Timestamp{1});
  CHECK_FALSE(delta.changed());
  CHECK(contexts["Room"]->ingress_states["in"].restart_count == 0);
}

TEST_CASE("egress policy excludes the parent role at join") {
  ContextMap contexts;
  contexts["BioLab"] = make_ctx(
      "kind: cot.dev/v1/Room\nname: BioLab\nrole: BioLab\n"
      "ingress:\n  - name: loc_in\n    intent: [\"any@location\"]\n");
  contexts["PhyLab"] = make_ctx(
      "kind: cot.dev/v1/Room\nname: PhyLab\nrole: PhyLab\n"
      "ingress:\n  - name: loc_in\n    intent: [\"any@location\"]\n");
  contexts["Phone"] = make_ctx(
      "kind: apple.com/v1/iphone\nname: Phone\n"
      "egress:\n"
      "  - name: location\n"
      "    policy: {mode: allow, roles: [BioLab]}\n");
  AssociationLog log;

  auto d1 = on_join(contexts, log, "Phone", "BioLab", Timestamp{1});
  CHECK(d1.changed());
  CHECK(contexts["BioLab"]->ingress_states["loc_in"].sources.size() == 1);

  auto d2 = on_join(contexts, log, "Phone", "PhyLab", Timestamp{2});
  CHECK_FALSE(d2.changed());
  CHECK(contexts["PhyLab"]->ingress_states["loc_in"].sources.empty());
  CHECK(contexts["PhyLab"]->ingress_states["loc_in"].restart_count == 0);
}

TEST_CASE("leave without join is an error and changes nothing") {
  ContextMap contexts;
  contexts["A"] = make_ctx("kind: a/v1/x\nname: A\n");
  contexts["B"] = make_ctx("kind: a/v1/x\nname: B\n");
  AssociationLog log;
  CHECK_THROWS_AS(on_leave(contexts, log, "A", "B", Timestamp{1}),
                  no_open_association);
  CHECK(snapshot_source_map(contexts) == resolve_all(contexts, log));
}

TEST_CASE("unknown context") {
  ContextMap contexts;
  contexts["A"] = make_ctx("kind: a/v1/x\nname: A\n");
  AssociationLog log;
  CHECK_THROWS_AS(on_join(contexts, log, "A", "Ghost", Timestamp{1}),
                  composition_error);
  CHECK_THROWS_AS(on_join(contexts, log, "Ghost", "A", Timestamp{1}),
                  composition_error);
}

TEST_CASE("two children, one leaves, the other remains") {
  ContextMap contexts;
  contexts["X"] = make_ctx(
      "kind: cot.dev/v1/Building\nname: X\n"
      "ingress:\n  - name: in\n    intent: [\"any@occupancy\"]\n");
  contexts["A"] = make_ctx(
      "kind: cot.dev/v1/Room\nname: A\negress:\n  - name: occupancy\n");
  contexts["B"] = make_ctx(
      "kind: cot.dev/v1/Room\nname: B\negress:\n  - name: occupancy\n");
  AssociationLog log;
  on_join(contexts, log, "A", "X", Timestamp{1});
  on_join(contexts, log, "B", "X", Timestamp{2});
  on_leave(contexts, log, "A", "X", Timestamp{3});

  auto& sources = contexts["X"]->ingress_states["in"].sources;
  REQUIRE(sources.size() == 1);
  CHECK(sources[0].ctx == "B");
  CHECK(snapshot_source_map(contexts) == resolve_all(contexts, log));
}

TEST_CASE("join/leave idempotence at the data plane") {
  std::mt19937_64 rng(77);
  auto w = fuzz::make_world(rng, 8);
  std::string diag;
  REQUIRE(fuzz::run_sequence(w, rng, 40, &diag));
  auto before = snapshot_source_map(w.contexts);
  // A join immediately followed by its leave restores the map.
  Timestamp t{999999};
  std::string child = w.names[2], parent = w.names[5];
  if (!w.log.has_open(child, parent)) {
    on_join(w.contexts, w.log, child, parent, t);
    t.ns++;
    on_leave(w.contexts, w.log, child, parent, t);
    CHECK(snapshot_source_map(w.contexts) == before);
  }
}

TEST_CASE("policy soundness: no source admitted against its egress policy") {
  std::mt19937_64 rng(123);
  auto w = fuzz::make_world(rng, 12);
  REQUIRE(fuzz::run_sequence(w, rng, 80));
  for (const auto& [name, ctx] : w.contexts) {
    for (const auto& [ingress_id, state] : ctx->ingress_states) {
      for (const auto& src : state.sources) {
        const auto& child = w.contexts.at(src.ctx);
        const EgressSpec* egress = child->egress(src.egress);
        REQUIRE(egress != nullptr);
        CHECK(allow(egress->effective_policy(), ctx->meta.role));
      }
    }
  }
}

TEST_CASE("restart counters move only when sources change") {
  ContextMap contexts;
  contexts["X"] = make_ctx(
      "kind: a/v1/b\nname: X\n"
      "ingress:\n  - name: in\n    intent: [\"any@e\"]\n");
  contexts["Y"] = make_ctx("kind: a/v1/c\nname: Y\negress:\n  - name: e\n");
  contexts["Z"] = make_ctx("kind: a/v1/d\nname: Z\n");  // nothing to offer
  AssociationLog log;
  auto& state = contexts["X"]->ingress_states["in"];

  on_join(contexts, log, "Z", "X", Timestamp{1});
  CHECK(state.restart_count == 0);
  on_join(contexts, log, "Y", "X", Timestamp{2});
  CHECK(state.restart_count == 1);
  on_leave(contexts, log, "Z", "X", Timestamp{3});
  CHECK(state.restart_count == 1);
  on_leave(contexts, log, "Y", "X", Timestamp{4});
  CHECK(state.restart_count == 2);
}

TEST_CASE("incremental composition equals resolve_all over random sequences") {
  std::mt19937_64 rng(2026);
  for (int seq = 0; seq < 10; seq++) {
    auto w = fuzz::make_world(rng, 12);
    std::string diag;
    bool ok = fuzz::run_sequence(w, rng, 120, &diag);
    CHECK_MESSAGE(ok, diag);
  }
}

TEST_CASE("association log persists and replays") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() /
                 ("ctxr-cdg-" + std::to_string(::getpid()));
  fs::remove_all(dir);
  {
    Store store({dir});
    AssociationLog log;
    log.open(store, "_runtime");
    log.record_join("a", "b", Timestamp{10});
    log.record_join("c", "b", Timestamp{11});
    log.record_leave("a", "b", Timestamp{12});
  }
  {
    Store store({dir});
    AssociationLog log;
    log.open(store, "_runtime");
    CHECK_FALSE(log.has_open("a", "b"));
    CHECK(log.has_open("c", "b"));
    auto open = log.open_associations();
    REQUIRE(open.size() == 1);
    CHECK(open[0].child == "c");
    CHECK(open[0].joined_at == Timestamp{11});
  }
  fs::remove_all(dir);
}
