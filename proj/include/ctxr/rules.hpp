#pragma once

#include <map>
#include <string>
#include <variant>
#include <vector>

#include "ctxr/flow.hpp"
#include "ctxr/record.hpp"

namespace ctxr {

/// Schema predicate of a match:action rule. Rules are evaluated top-down and
/// the first match wins; a wildcard, if present, must be last.
class SchemaMatch {
public:
  struct SchemaIs { std::string canonical; };  // canonical type string equality
  struct Has {
    std::string field;
    DataType type;
  };
  struct All { std::vector<SchemaMatch> items; };
  struct Any { std::vector<SchemaMatch> items; };
  struct Wildcard {};

  using Node = std::variant<SchemaIs, Has, All, Any, Wildcard>;

  explicit SchemaMatch(Node n) : node_(std::move(n)) {}

  bool matches(const Schema& schema) const;
  bool is_wildcard() const {
    return std::holds_alternative<Wildcard>(node_);
  }
  const Node& node() const { return node_; }

  /// Grammar: `*` | `has(<f:type>)` | `has(f)` is not a match (field presence
  /// goes through has(<f:type>) or all/any) | `schema("{...}")` |
  /// `all(m, m, ...)` | `any(m, m, ...)`.
  static SchemaMatch parse(std::string_view text);
  std::string to_string() const;

private:
  Node node_;
};

/// What to do with records whose schema matched.
class RuleAction {
public:
  struct Extract {};  // cut of the fields named by the match predicate
  struct Reject {};   // filter all, counted and routed to the log
  struct Drop {};     // filter all, counted only
  struct Log { std::string label; };
  struct Trim { std::vector<std::string> fields; };  // cut complement
  struct RenameFields {
    std::vector<std::pair<std::string, std::string>> pairs;  // new := old
  };
  struct Convert { Pipeline fragment; };
  struct Accept {};

  using Node = std::variant<Extract, Reject, Drop, Log, Trim, RenameFields,
                            Convert, Accept>;

  explicit RuleAction(Node n) : node_(std::move(n)) {}
  const Node& node() const { return node_; }

  /// Grammar: `extract` | `reject` | `drop` | `accept` | `log("label")` |
  /// `trim(f, ...)` | `rename a:=b, ...` | `convert("pipeline")`.
  static RuleAction parse(std::string_view text);
  std::string to_string() const;

private:
  Node node_;
};

struct MatchActionRule {
  SchemaMatch match;
  RuleAction action;
};

/// What happens to schemas matching no rule when the rule list is non-empty
/// and has no wildcard (and to schemas unseen at join time).
enum class UnmatchedPolicy { Accept, Reject };

/// Throws std::invalid_argument when a wildcard rule is not last.
void validate_rules(const std::vector<MatchActionRule>& rules);

/// Join-time compilation product: one pipeline prefix per advertised source
/// schema, plus a fallback for schemas that were not advertised at join time
/// (rendered from the wildcard rule when present, else from `unmatched`).
struct CompiledInjection {
  std::map<uint64_t, Pipeline> by_schema;  // fingerprint -> prefix
  Pipeline fallback;

  const Pipeline& prefix_for(const Schema& s) const;
  /// Canonical representation for equality and oracle comparison.
  std::string repr() const;
};

/// Pure function of (rules, source schemas, unmatched policy).
CompiledInjection compile_injection(const std::vector<MatchActionRule>& rules,
                                    const std::vector<Schema>& source_schemas,
                                    UnmatchedPolicy unmatched);

/// Renders one action against one schema as pipeline stages.
Pipeline compile_action(const RuleAction& action, const SchemaMatch& match,
                        const Schema& schema);

}  // namespace ctxr
