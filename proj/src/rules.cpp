#include "ctxr/rules.hpp"

#include <algorithm>

namespace ctxr {

namespace {

bool is_ident_start(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
}
bool is_ident_char(char c) { return is_ident_start(c) || (c >= '0' && c <= '9'); }

struct RuleParser {
  std::string_view s;
  size_t pos = 0;

  [[noreturn]] void fail(const std::string& msg) { throw parse_error(msg, pos); }
  void skip_ws() {
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t')) pos++;
  }
  char peek() {
    skip_ws();
    return pos < s.size() ? s[pos] : '\0';
  }
  bool accept(char c) {
    if (peek() == c) {
      pos++;
      return true;
    }
    return false;
  }
  void expect(char c) {
    if (!accept(c)) fail(std::string("expected '") + c + "'");
  }
  bool eof() {
    skip_ws();
    return pos >= s.size();
  }

  std::string ident() {
    skip_ws();
    if (pos >= s.size() || !is_ident_start(s[pos])) fail("expected identifier");
    size_t start = pos;
    while (pos < s.size() && is_ident_char(s[pos])) pos++;
    return std::string(s.substr(start, pos - start));
  }

  std::string string_literal() {
    skip_ws();
    if (peek() != '"') fail("expected string");
    pos++;
    std::string raw = "\"";
    while (pos < s.size()) {
      char c = s[pos++];
      raw += c;
      if (c == '\\') {
        if (pos < s.size()) raw += s[pos++];
        continue;
      }
      if (c == '"') break;
    }
    return parse_text("{s:" + raw + "}").find("s")->as_string();
  }

  DataType type_name() {
    std::string w = ident();
    auto t = DataType::parse(w);
    if (!t) fail("unknown type '" + w + "'");
    return *t;
  }

  SchemaMatch match_expr() {
    skip_ws();
    if (accept('*')) return SchemaMatch(SchemaMatch::Wildcard{});
    std::string w = ident();
    if (w == "has") {
      expect('(');
      expect('<');
      std::string f = ident();
      expect(':');
      DataType t = type_name();
      expect('>');
      expect(')');
      return SchemaMatch(SchemaMatch::Has{std::move(f), std::move(t)});
    }
    if (w == "schema") {
      expect('(');
      std::string canon = string_literal();
      expect(')');
      return SchemaMatch(SchemaMatch::SchemaIs{std::move(canon)});
    }
    if (w == "all" || w == "any") {
      expect('(');
      std::vector<SchemaMatch> items;
      while (true) {
        items.push_back(match_expr());
        if (accept(',')) continue;
        expect(')');
        break;
      }
      if (w == "all") return SchemaMatch(SchemaMatch::All{std::move(items)});
      return SchemaMatch(SchemaMatch::Any{std::move(items)});
    }
    fail("unknown match form '" + w + "'");
  }

  RuleAction action_expr() {
    std::string w = ident();
    if (w == "extract") return RuleAction(RuleAction::Extract{});
    if (w == "reject") return RuleAction(RuleAction::Reject{});
    if (w == "drop") return RuleAction(RuleAction::Drop{});
    if (w == "accept") return RuleAction(RuleAction::Accept{});
    if (w == "log") {
      expect('(');
      std::string label = string_literal();
      expect(')');
      return RuleAction(RuleAction::Log{std::move(label)});
    }
    if (w == "trim") {
      expect('(');
      std::vector<std::string> fields;
      while (true) {
        fields.push_back(ident());
        if (accept(',')) continue;
        expect(')');
        break;
      }
      return RuleAction(RuleAction::Trim{std::move(fields)});
    }
    if (w == "rename") {
      std::vector<std::pair<std::string, std::string>> pairs;
      while (true) {
        std::string to = ident();
        skip_ws();
        if (s.substr(pos, 2) != ":=") fail("expected ':='");
        pos += 2;
        std::string from = ident();
        pairs.emplace_back(std::move(to), std::move(from));
        if (!accept(',')) break;
      }
      return RuleAction(RuleAction::RenameFields{std::move(pairs)});
    }
    if (w == "convert") {
      expect('(');
      std::string text = string_literal();
      expect(')');
      Pipeline frag = Pipeline::parse(text);
      if (!frag.record_local())
        fail("convert fragment must be record-local (no head/sort/aggregate)");
      return RuleAction(RuleAction::Convert{std::move(frag)});
    }
    fail("unknown action '" + w + "'");
  }
};

void collect_has_fields(const SchemaMatch& m, std::vector<std::string>& out) {
  if (auto* h = std::get_if<SchemaMatch::Has>(&m.node())) {
    if (std::find(out.begin(), out.end(), h->field) == out.end())
      out.push_back(h->field);
    return;
  }
  if (auto* a = std::get_if<SchemaMatch::All>(&m.node())) {
    for (const auto& i : a->items) collect_has_fields(i, out);
    return;
  }
  if (auto* a = std::get_if<SchemaMatch::Any>(&m.node())) {
    for (const auto& i : a->items) collect_has_fields(i, out);
  }
}

}  // namespace

bool SchemaMatch::matches(const Schema& schema) const {
  if (auto* s = std::get_if<SchemaIs>(&node_))
    return schema.to_string() == s->canonical;
  if (auto* h = std::get_if<Has>(&node_)) {
    auto idx = schema.index_of(h->field);
    return idx && schema.fields()[*idx].second == h->type;
  }
  if (auto* a = std::get_if<All>(&node_)) {
    for (const auto& i : a->items)
      if (!i.matches(schema)) return false;
    return true;
  }
  if (auto* a = std::get_if<Any>(&node_)) {
    for (const auto& i : a->items)
      if (i.matches(schema)) return true;
    return false;
  }
  return true;  // wildcard
}

SchemaMatch SchemaMatch::parse(std::string_view text) {
  RuleParser p{text};
  SchemaMatch m = p.match_expr();
  if (!p.eof()) p.fail("trailing input in match");
  return m;
}

std::string SchemaMatch::to_string() const {
  if (auto* s = std::get_if<SchemaIs>(&node_))
    return "schema(" + serialize_value(Value::string(s->canonical)) + ")";
  if (auto* h = std::get_if<Has>(&node_))
    return "has(<" + h->field + ":" + h->type.to_string() + ">)";
  if (auto* a = std::get_if<All>(&node_)) {
    std::string out = "all(";
    for (size_t i = 0; i < a->items.size(); i++)
      out += (i ? "," : "") + a->items[i].to_string();
    return out + ")";
  }
  if (auto* a = std::get_if<Any>(&node_)) {
    std::string out = "any(";
    for (size_t i = 0; i < a->items.size(); i++)
      out += (i ? "," : "") + a->items[i].to_string();
    return out + ")";
  }
  return "*";
}

RuleAction RuleAction::parse(std::string_view text) {
  RuleParser p{text};
  RuleAction a = p.action_expr();
  if (!p.eof()) p.fail("trailing input in action");
  return a;
}

std::string RuleAction::to_string() const {
  if (std::holds_alternative<Extract>(node_)) return "extract";
  if (std::holds_alternative<Reject>(node_)) return "reject";
  if (std::holds_alternative<Drop>(node_)) return "drop";
  if (std::holds_alternative<Accept>(node_)) return "accept";
  if (auto* l = std::get_if<Log>(&node_))
    return "log(" + serialize_value(Value::string(l->label)) + ")";
  if (auto* t = std::get_if<Trim>(&node_)) {
    std::string out = "trim(";
    for (size_t i = 0; i < t->fields.size(); i++)
      out += (i ? "," : "") + t->fields[i];
    return out + ")";
  }
  if (auto* r = std::get_if<RenameFields>(&node_)) {
    std::string out = "rename ";
    for (size_t i = 0; i < r->pairs.size(); i++) {
      if (i) out += ',';
      out += r->pairs[i].first + ":=" + r->pairs[i].second;
    }
    return out;
  }
  const auto& c = std::get<Convert>(node_);
  return "convert(" + serialize_value(Value::string(c.fragment.to_string())) + ")";
}

void validate_rules(const std::vector<MatchActionRule>& rules) {
  for (size_t i = 0; i < rules.size(); i++) {
    if (rules[i].match.is_wildcard() && i + 1 != rules.size())
      throw std::invalid_argument("wildcard rule must be last");
  }
}

Pipeline compile_action(const RuleAction& action, const SchemaMatch& match,
                        const Schema& schema) {
  using A = RuleAction;
  const auto& node = action.node();
  if (std::holds_alternative<A::Accept>(node)) return Pipeline{};
  if (std::holds_alternative<A::Reject>(node))
    return Pipeline({stage::DropAll{"rule-reject", true}});
  if (std::holds_alternative<A::Drop>(node))
    return Pipeline({stage::DropAll{"rule-drop", false}});
  if (auto* l = std::get_if<A::Log>(&node))
    return Pipeline({stage::LogSink{l->label}});
  if (std::holds_alternative<A::Extract>(node)) {
    std::vector<std::string> fields;
    collect_has_fields(match, fields);
    std::erase_if(fields, [&](const std::string& f) {
      return !schema.index_of(f).has_value();
    });
    if (fields.empty()) return Pipeline{};
    return Pipeline({stage::Cut{std::move(fields)}});
  }
  if (auto* t = std::get_if<A::Trim>(&node)) {
    std::vector<std::string> keep;
    for (const auto& [name, _] : schema.fields()) {
      if (std::find(t->fields.begin(), t->fields.end(), name) == t->fields.end())
        keep.push_back(name);
    }
    if (keep.empty()) return Pipeline({stage::DropAll{"trim-all", false}});
    return Pipeline({stage::Cut{std::move(keep)}});
  }
  if (auto* r = std::get_if<A::RenameFields>(&node))
    return Pipeline({stage::Rename{r->pairs}});
  return std::get<A::Convert>(node).fragment;
}

const Pipeline& CompiledInjection::prefix_for(const Schema& s) const {
  auto it = by_schema.find(s.fingerprint());
  return it != by_schema.end() ? it->second : fallback;
}

std::string CompiledInjection::repr() const {
  std::string out;
  for (const auto& [fp, p] : by_schema) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fp));
    out += buf;
    out += "->[";
    out += p.to_string();
    out += "];";
  }
  out += "fallback->[" + fallback.to_string() + "]";
  return out;
}

CompiledInjection compile_injection(const std::vector<MatchActionRule>& rules,
                                    const std::vector<Schema>& source_schemas,
                                    UnmatchedPolicy unmatched) {
  validate_rules(rules);
  CompiledInjection out;
  Pipeline unmatched_prefix =
      unmatched == UnmatchedPolicy::Accept
          ? Pipeline{}
          : Pipeline({stage::DropAll{"unmatched-schema", true}});
  for (const Schema& schema : source_schemas) {
    Pipeline prefix = unmatched_prefix;
    for (const auto& rule : rules) {
      if (rule.match.matches(schema)) {
        prefix = compile_action(rule.action, rule.match, schema);
        break;  // first match wins
      }
    }
    out.by_schema[schema.fingerprint()] = std::move(prefix);
  }
  // Schemas not advertised at join time: only a wildcard rule can speak for
  // them; otherwise the unmatched policy applies.
  out.fallback = unmatched_prefix;
  if (!rules.empty() && rules.back().match.is_wildcard()) {
    out.fallback = compile_action(rules.back().action, rules.back().match,
                                  Schema{});
  }
  return out;
}

}  // namespace ctxr
