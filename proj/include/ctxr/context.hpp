#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ctxr/flow.hpp"
#include "ctxr/policy.hpp"
#include "ctxr/record.hpp"
#include "ctxr/rules.hpp"
#include "ctxr/store.hpp"

namespace ctxr {

class config_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class access_denied : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class unknown_target : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Canonical form `group/version/name`, e.g. `cot.dev/v1/Building`.
struct Kind {
  std::string group, version, name;

  static std::optional<Kind> parse(std::string_view text);
  std::string to_string() const { return group + "/" + version + "/" + name; }
  bool operator==(const Kind&) const = default;
};

/// One ingress source declaration: `any@egress`, `g/v/n@egress` (components
/// may be `*`), or `name@egress` for a direct reference.
struct SourcingIntent {
  enum class Selector { Direct, KindPattern, Any };
  Selector selector = Selector::Any;
  std::string direct_name;                          // Direct
  std::string group_pat, version_pat, name_pat;     // KindPattern
  std::string egress;

  static std::optional<SourcingIntent> parse(std::string_view text);
  std::string to_string() const;
};

struct ContextMeta {
  Kind kind;
  std::string name;
  Role role;
};

struct IngressSpec {
  std::string id;
  std::vector<SourcingIntent> intents;
  std::vector<MatchActionRule> rules;
  Pipeline flow;      // per-source
  Pipeline flow_agg;  // combined
  bool patch_from = false;
  UnmatchedPolicy on_unmatched = UnmatchedPolicy::Accept;
};

struct EgressSpec {
  std::string id;
  Pipeline flow;
  std::optional<EgressPolicy> policy;  // omitted means allow-all
  std::vector<Schema> declared_schemas;

  EgressPolicy effective_policy() const {
    return policy ? *policy : EgressPolicy::allow_all();
  }
};

/// Parsed declarative context document (YAML-compatible attribute-value).
struct ContextConfig {
  ContextMeta meta;
  std::vector<IngressSpec> ingresses;
  std::vector<EgressSpec> egresses;
  std::string source_text;  // the raw document, for persistence

  /// Parses one or more `---`-separated documents; throws on the first error.
  static std::vector<ContextConfig> parse_yaml(const std::string& text);
  void validate() const;
};

/// Per-document parse result for partial application: bad documents come
/// back as errors, the rest as configs.
struct ParsedDoc {
  std::optional<ContextConfig> config;
  std::string error;
};
std::vector<ParsedDoc> parse_yaml_each(const std::string& text);

/// One ingress's resolved upstream: child context, its egress, and the
/// rule-compiled pipeline prefix.
struct ResolvedSource {
  std::string ctx;
  std::string egress;
  CompiledInjection injection;

  std::string label() const { return ctx + "@" + egress; }
};

struct IngressState {
  std::vector<ResolvedSource> sources;
  uint64_t restart_count = 0;

  bool has_source(const std::string& ctx, const std::string& egress) const;
};

/// Live assembly of one context: immutable specs plus runtime state. Control
/// state is mutated only by the runtime's serialized composition events.
class ContextState {
public:
  ContextState(ContextConfig config);

  ContextMeta meta;
  std::vector<IngressSpec> ingresses;
  std::vector<EgressSpec> egresses;
  std::map<std::string, IngressState> ingress_states;  // by ingress id
  std::string config_text;

  const std::string& pool() const { return meta.name; }
  const IngressSpec* ingress(const std::string& id) const;
  const EgressSpec* egress(const std::string& id) const;

  /// Branch backing an egress view; changes generation when the egress flow
  /// is reconfigured.
  std::string view_branch(const std::string& egress_id) const;
  void bump_view_generation(const std::string& egress_id);
  /// Carries generations over from the previous incarnation on reconfig.
  void adopt_view_generations(const ContextState& old);
  /// Repoints each egress at its highest on-disk generation branch.
  void recover_view_generations(Store& store);

  /// Creates the pool, the main branch and one branch per egress.
  void instantiate(Store& store);

  /// Declared schemas union fingerprints observed in the first view commit.
  std::vector<Schema> advertised_schemas(const std::string& egress_id) const;
  /// Records the schemas seen in the first commit of an egress view.
  /// Returns true when this changed the advertised set.
  bool note_view_schemas(const std::string& egress_id,
                         const std::vector<TypedRecord>& records);
  void recover_observed_schemas(Store& store);

  /// Next processing timestamp: now, bumped to stay strictly monotonic per
  /// context store.
  Timestamp stamp_next();
  void recover_stamp(Store& store);

  /// Serializes stamp+commit sequences against the context's main branch so
  /// concurrently stamping writers cannot land out of ts order.
  std::unique_lock<std::mutex> lock_for_load() {
    return std::unique_lock(load_mu_);
  }

private:
  std::map<std::string, int> view_generation_;
  std::map<std::string, std::vector<Schema>> observed_;  // first-commit schemas
  mutable std::mutex mu_;
  Timestamp last_ts_ = Timestamp::min();
};

using ContextMap = std::map<std::string, std::shared_ptr<ContextState>>;

/// Stamps ts := now (monotonic per store) and event_ts := existing else ts,
/// then commits to main.
CommitId ctx_load(ContextState& ctx, Store& store,
                  std::vector<TypedRecord> records);

/// Policy-checked read of an egress view. acl may be null (no ACL regime).
std::vector<TypedRecord> egress_query(const ContextState& ctx, Store& store,
                                      const std::string& egress_id,
                                      const Pipeline& p, const Role& caller,
                                      const AclTable* acl,
                                      EvalReport* report = nullptr,
                                      uint64_t* scanned = nullptr);

/// Policy-checked continuous subscription delivering view commits in order,
/// exactly once per subscriber, history first.
Store::Watcher egress_watch(const ContextState& ctx, Store& store,
                            const std::string& egress_id, const Role& caller,
                            const AclTable* acl);

}  // namespace ctxr
