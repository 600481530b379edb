#include "ctxr/context.hpp"

#include <yaml-cpp/yaml.h>

#include <chrono>
#include <cstdlib>

namespace ctxr {

namespace {

bool valid_identifier(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
          (c >= '0' && c <= '9') || c == '_'))
      return false;
  }
  return !(s[0] >= '0' && s[0] <= '9');
}

bool valid_kind_component(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
          (c >= '0' && c <= '9') || c == '_' || c == '.' || c == '-'))
      return false;
  }
  return true;
}

}  // namespace

std::optional<Kind> Kind::parse(std::string_view text) {
  size_t a = text.find('/');
  if (a == std::string_view::npos) return std::nullopt;
  size_t b = text.find('/', a + 1);
  if (b == std::string_view::npos) return std::nullopt;
  if (text.find('/', b + 1) != std::string_view::npos) return std::nullopt;
  Kind k{std::string(text.substr(0, a)), std::string(text.substr(a + 1, b - a - 1)),
         std::string(text.substr(b + 1))};
  if (!valid_kind_component(k.group) || !valid_kind_component(k.version) ||
      !valid_kind_component(k.name))
    return std::nullopt;
  return k;
}

std::optional<SourcingIntent> SourcingIntent::parse(std::string_view text) {
  size_t at = text.rfind('@');
  if (at == std::string_view::npos || at == 0 || at + 1 == text.size())
    return std::nullopt;
  std::string_view lhs = text.substr(0, at);
  SourcingIntent intent;
  intent.egress = std::string(text.substr(at + 1));
  if (!valid_identifier(intent.egress)) return std::nullopt;
  if (lhs == "any") {
    intent.selector = Selector::Any;
    return intent;
  }
  if (lhs.find('/') != std::string_view::npos) {
    size_t a = lhs.find('/');
    size_t b = lhs.find('/', a + 1);
    if (b == std::string_view::npos ||
        lhs.find('/', b + 1) != std::string_view::npos)
      return std::nullopt;
    intent.selector = Selector::KindPattern;
    intent.group_pat = std::string(lhs.substr(0, a));
    intent.version_pat = std::string(lhs.substr(a + 1, b - a - 1));
    intent.name_pat = std::string(lhs.substr(b + 1));
    auto ok = [](const std::string& c) {
      return c == "*" || valid_kind_component(c);
    };
    if (!ok(intent.group_pat) || !ok(intent.version_pat) || !ok(intent.name_pat))
      return std::nullopt;
    return intent;
  }
  intent.selector = Selector::Direct;
  intent.direct_name = std::string(lhs);
  if (!valid_identifier(intent.direct_name)) return std::nullopt;
  return intent;
}

std::string SourcingIntent::to_string() const {
  switch (selector) {
    case Selector::Any:
      return "any@" + egress;
    case Selector::Direct:
      return direct_name + "@" + egress;
    case Selector::KindPattern:
      return group_pat + "/" + version_pat + "/" + name_pat + "@" + egress;
  }
  return {};
}

// ---------------------------------------------------------------------------
// Config parsing

namespace {

Pipeline parse_flow_field(const YAML::Node& node, const std::string& what) {
  if (!node) return Pipeline{};
  try {
    return Pipeline::parse(node.as<std::string>());
  } catch (const parse_error& e) {
    throw config_error("bad pipeline in " + what + ": " + e.what());
  }
}

std::vector<MatchActionRule> parse_rules(const YAML::Node& node,
                                         const std::string& what) {
  std::vector<MatchActionRule> rules;
  if (!node) return rules;
  if (!node.IsSequence()) throw config_error(what + ": rules must be a list");
  for (const auto& item : node) {
    if (!item["match"] || !item["action"])
      throw config_error(what + ": each rule needs match and action");
    try {
      rules.push_back(MatchActionRule{
          SchemaMatch::parse(item["match"].as<std::string>()),
          RuleAction::parse(item["action"].as<std::string>())});
    } catch (const parse_error& e) {
      throw config_error(what + ": bad rule: " + e.what());
    }
  }
  try {
    validate_rules(rules);
  } catch (const std::invalid_argument& e) {
    throw config_error(what + ": " + e.what());
  }
  return rules;
}

EgressPolicy parse_policy(const YAML::Node& node, const std::string& what) {
  EgressPolicy p;
  std::string mode = node["mode"] ? node["mode"].as<std::string>() : "";
  if (mode == "allow") {
    p.mode = EgressPolicy::Mode::Allow;
  } else if (mode == "block") {
    p.mode = EgressPolicy::Mode::Block;
  } else {
    throw config_error(what + ": policy mode must be allow or block");
  }
  if (node["roles"]) {
    for (const auto& r : node["roles"]) p.roles.insert(r.as<std::string>());
  }
  return p;
}

ContextConfig parse_one(const YAML::Node& doc, const std::string& raw) {
  ContextConfig cfg;
  cfg.source_text = raw;
  if (!doc["kind"] || !doc["name"])
    throw config_error("context document needs kind and name");
  auto kind = Kind::parse(doc["kind"].as<std::string>());
  if (!kind) throw config_error("invalid kind '" + doc["kind"].as<std::string>() +
                                "' (want group/version/name)");
  cfg.meta.kind = *kind;
  cfg.meta.name = doc["name"].as<std::string>();
  cfg.meta.role = Role{doc["role"] ? doc["role"].as<std::string>() : "default"};

  for (const auto& in : doc["ingress"]) {
    IngressSpec spec;
    if (!in["name"]) throw config_error("ingress needs a name");
    spec.id = in["name"].as<std::string>();
    std::string what = cfg.meta.name + "/ingress/" + spec.id;
    for (const auto& i : in["intent"]) {
      auto intent = SourcingIntent::parse(i.as<std::string>());
      if (!intent)
        throw config_error(what + ": bad intent '" + i.as<std::string>() + "'");
      spec.intents.push_back(std::move(*intent));
    }
    // `sources` entries are pre-resolved direct references; they fold into
    // the intent list.
    for (const auto& srcs : in["sources"]) {
      auto intent = SourcingIntent::parse(srcs.as<std::string>());
      if (!intent || intent->selector != SourcingIntent::Selector::Direct)
        throw config_error(what + ": sources entries must be name@egress");
      spec.intents.push_back(std::move(*intent));
    }
    spec.rules = parse_rules(in["rules"], what);
    spec.flow = parse_flow_field(in["flow"], what + "/flow");
    spec.flow_agg = parse_flow_field(in["flow_agg"], what + "/flow_agg");
    if (in["patch_from"]) spec.patch_from = in["patch_from"].as<bool>();
    if (in["on_unmatched"]) {
      std::string u = in["on_unmatched"].as<std::string>();
      if (u == "accept") spec.on_unmatched = UnmatchedPolicy::Accept;
      else if (u == "reject") spec.on_unmatched = UnmatchedPolicy::Reject;
      else throw config_error(what + ": on_unmatched must be accept or reject");
    }
    cfg.ingresses.push_back(std::move(spec));
  }

  for (const auto& out : doc["egress"]) {
    EgressSpec spec;
    if (!out["name"]) throw config_error("egress needs a name");
    spec.id = out["name"].as<std::string>();
    std::string what = cfg.meta.name + "/egress/" + spec.id;
    spec.flow = parse_flow_field(out["flow"], what + "/flow");
    if (out["policy"]) spec.policy = parse_policy(out["policy"], what);
    for (const auto& s : out["schemas"]) {
      auto t = DataType::parse(s.as<std::string>());
      if (!t || t->kind() != TypeKind::Record)
        throw config_error(what + ": bad schema '" + s.as<std::string>() + "'");
      spec.declared_schemas.push_back(Schema(t->fields()));
    }
    cfg.egresses.push_back(std::move(spec));
  }
  cfg.validate();
  return cfg;
}

}  // namespace

std::vector<ContextConfig> ContextConfig::parse_yaml(const std::string& text) {
  std::vector<ContextConfig> out;
  for (auto& doc : parse_yaml_each(text)) {
    if (!doc.error.empty()) throw config_error(doc.error);
    out.push_back(std::move(*doc.config));
  }
  return out;
}

std::vector<ParsedDoc> parse_yaml_each(
    const std::string& text) {
  std::vector<ParsedDoc> out;
  std::vector<YAML::Node> docs;
  try {
    docs = YAML::LoadAll(text);
  } catch (const YAML::Exception& e) {
    out.push_back({std::nullopt, std::string("yaml error: ") + e.what()});
    return out;
  }
  for (const auto& doc : docs) {
    if (!doc || doc.IsNull()) continue;
    try {
      YAML::Emitter em;
      em << doc;
      out.push_back({parse_one(doc, std::string(em.c_str()) + "\n"), ""});
    } catch (const config_error& e) {
      out.push_back({std::nullopt, e.what()});
    } catch (const YAML::Exception& e) {
      out.push_back({std::nullopt, std::string("yaml error: ") + e.what()});
    }
  }
  return out;
}

void ContextConfig::validate() const {
  if (!valid_identifier(meta.name))
    throw config_error("context name '" + meta.name + "' is not an identifier");
  if (meta.role.id.empty()) throw config_error("role must be non-empty");
  std::set<std::string> seen;
  for (const auto& in : ingresses) {
    if (!valid_identifier(in.id))
      throw config_error("bad ingress id '" + in.id + "'");
    if (!seen.insert("i:" + in.id).second)
      throw config_error("duplicate ingress id '" + in.id + "'");
    for (const auto& intent : in.intents) {
      if (intent.egress.empty())
        throw config_error("intent egress must be non-empty");
    }
  }
  for (const auto& out : egresses) {
    if (!valid_identifier(out.id))
      throw config_error("bad egress id '" + out.id + "'");
    if (out.id == "main" || out.id == "errors")
      throw config_error("egress id '" + out.id + "' is reserved");
    if (!seen.insert("e:" + out.id).second)
      throw config_error("duplicate egress id '" + out.id + "'");
  }
}

// ---------------------------------------------------------------------------
// ContextState

bool IngressState::has_source(const std::string& ctx,
                              const std::string& egress) const {
  for (const auto& s : sources) {
    if (s.ctx == ctx && s.egress == egress) return true;
  }
  return false;
}

ContextState::ContextState(ContextConfig config)
    : meta(std::move(config.meta)),
      ingresses(std::move(config.ingresses)),
      egresses(std::move(config.egresses)),
      config_text(std::move(config.source_text)) {
  for (const auto& in : ingresses) ingress_states[in.id];
}

const IngressSpec* ContextState::ingress(const std::string& id) const {
  for (const auto& i : ingresses)
    if (i.id == id) return &i;
  return nullptr;
}

const EgressSpec* ContextState::egress(const std::string& id) const {
  for (const auto& e : egresses)
    if (e.id == id) return &e;
  return nullptr;
}

std::string ContextState::view_branch(const std::string& egress_id) const {
  std::lock_guard lk(mu_);
  auto it = view_generation_.find(egress_id);
  int gen = it == view_generation_.end() ? 0 : it->second;
  return gen == 0 ? egress_id : egress_id + "~" + std::to_string(gen);
}

void ContextState::bump_view_generation(const std::string& egress_id) {
  std::lock_guard lk(mu_);
  view_generation_[egress_id]++;
}

void ContextState::adopt_view_generations(const ContextState& old) {
  std::scoped_lock lk(mu_, old.mu_);
  view_generation_ = old.view_generation_;
}

void ContextState::recover_view_generations(Store& store) {
  if (!store.has_pool(pool())) return;
  for (const auto& e : egresses) {
    int best = 0;
    for (const auto& branch : store.branch_names(pool())) {
      if (branch == e.id) continue;
      if (branch.rfind(e.id + "~", 0) == 0) {
        int gen = std::atoi(branch.c_str() + e.id.size() + 1);
        if (gen > best) best = gen;
      }
    }
    if (best > 0) {
      std::lock_guard lk(mu_);
      view_generation_[e.id] = best;
    }
  }
}

void ContextState::instantiate(Store& store) {
  store.create_pool(pool());
  for (const auto& e : egresses) store.create_branch(pool(), view_branch(e.id));
}

std::vector<Schema> ContextState::advertised_schemas(
    const std::string& egress_id) const {
  const EgressSpec* spec = egress(egress_id);
  if (!spec) return {};
  std::vector<Schema> out = spec->declared_schemas;
  std::lock_guard lk(mu_);
  auto it = observed_.find(egress_id);
  if (it != observed_.end()) {
    for (const Schema& s : it->second) {
      bool dup = false;
      for (const Schema& have : out)
        if (have.fingerprint() == s.fingerprint()) dup = true;
      if (!dup) out.push_back(s);
    }
  }
  return out;
}

bool ContextState::note_view_schemas(const std::string& egress_id,
                                     const std::vector<TypedRecord>& records) {
  std::lock_guard lk(mu_);
  if (observed_.count(egress_id)) return false;  // only the first commit counts
  std::vector<Schema>& slot = observed_[egress_id];
  for (const auto& r : records) {
    bool dup = false;
    for (const Schema& have : slot)
      if (have.fingerprint() == r.schema().fingerprint()) dup = true;
    if (!dup) slot.push_back(r.schema());
  }
  return !slot.empty();
}

void ContextState::recover_observed_schemas(Store& store) {
  for (const auto& e : egresses) {
    std::string branch = view_branch(e.id);
    if (!store.has_branch(pool(), branch)) continue;
    auto commits = store.commits(pool(), branch, 0);
    if (!commits.empty()) note_view_schemas(e.id, commits.front().records);
  }
}

Timestamp ContextState::stamp_next() {
  auto now = std::chrono::duration_cast<std::chrono::nanoseconds>(
                 std::chrono::system_clock::now().time_since_epoch())
                 .count();
  std::lock_guard lk(mu_);
  Timestamp t{now};
  if (t.ns <= last_ts_.ns) t.ns = last_ts_.ns + 1;
  last_ts_ = t;
  return t;
}

void ContextState::recover_stamp(Store& store) {
  Timestamp max_ts = Timestamp::min();
  for (const auto& r : store.records(pool(), "main")) {
    const Value* v = r.find("ts");
    if (v && v->is_time() && v->as_time() > max_ts) max_ts = v->as_time();
  }
  std::lock_guard lk(mu_);
  if (max_ts > last_ts_) last_ts_ = max_ts;
}

// ---------------------------------------------------------------------------
// Data-plane operations

CommitId ctx_load(ContextState& ctx, Store& store,
                  std::vector<TypedRecord> records) {
  if (records.empty()) throw store_error("empty-commit");
  std::vector<TypedRecord> stamped;
  stamped.reserve(records.size());
  for (auto& r : records) {
    Timestamp ts = ctx.stamp_next();
    TypedRecord out = r.with_field("ts", Value::time(ts));
    const Value* ev = out.find("event_ts");
    if (!ev || !ev->is_time())
      out = out.with_field("event_ts", Value::time(ts));
    stamped.push_back(std::move(out));
  }
  return store.load(ctx.pool(), "main", std::move(stamped), {}, true);
}

namespace {

void check_egress_access(const ContextState& ctx, const EgressSpec& spec,
                         const Role& caller, const AclTable* acl) {
  if (!permit_query(spec.effective_policy(), acl, caller, ctx.meta.name,
                    spec.id))
    throw access_denied("role '" + caller.id + "' may not access " +
                        ctx.meta.name + "@" + spec.id);
}

}  // namespace

std::vector<TypedRecord> egress_query(const ContextState& ctx, Store& store,
                                      const std::string& egress_id,
                                      const Pipeline& p, const Role& caller,
                                      const AclTable* acl, EvalReport* report,
                                      uint64_t* scanned) {
  const EgressSpec* spec = ctx.egress(egress_id);
  if (!spec)
    throw unknown_target("no egress '" + egress_id + "' on " + ctx.meta.name);
  check_egress_access(ctx, *spec, caller, acl);
  return store.query(ctx.pool(), ctx.view_branch(egress_id), p, report, scanned);
}

Store::Watcher egress_watch(const ContextState& ctx, Store& store,
                            const std::string& egress_id, const Role& caller,
                            const AclTable* acl) {
  const EgressSpec* spec = ctx.egress(egress_id);
  if (!spec)
    throw unknown_target("no egress '" + egress_id + "' on " + ctx.meta.name);
  check_egress_access(ctx, *spec, caller, acl);
  return store.watch(ctx.pool(), ctx.view_branch(egress_id), 0);
}

}  // namespace ctxr
