#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace ctxr {

struct Role {
  std::string id;

  bool operator==(const Role&) const = default;
};

/// Per-egress access list. An omitted policy in config maps to an empty
/// blocklist, which admits every role, at join time and query time alike.
struct EgressPolicy {
  enum class Mode { Allow, Block };
  Mode mode = Mode::Block;
  std::set<std::string> roles;  // may contain "*"

  static EgressPolicy allow_all() { return {Mode::Block, {}}; }
};

/// allowlist: member or wildcard admits; blocklist: member or wildcard denies.
bool allow(const EgressPolicy& policy, const Role& role);

/// `name-or-* @ egress-or-*` pattern from an ACL entry.
struct TargetPattern {
  std::string name;
  std::string egress;

  static std::optional<TargetPattern> parse(std::string_view text);
  bool matches(std::string_view target_name, std::string_view target_egress) const;
  std::string to_string() const { return name + "@" + egress; }
};

/// role id -> target patterns. Unknown roles are denied.
class AclTable {
public:
  AclTable() = default;

  void add(const std::string& role, TargetPattern pattern);
  bool empty() const { return entries_.empty(); }
  const std::map<std::string, std::vector<TargetPattern>>& entries() const {
    return entries_;
  }

private:
  std::map<std::string, std::vector<TargetPattern>> entries_;
};

/// True iff any pattern for the role matches both target components.
/// Unknown role or empty table: deny.
bool check_target(const AclTable& acl, const Role& role,
                  std::string_view target_name, std::string_view target_egress);

/// The one guard used on query/watch paths: the egress policy must admit the
/// role and, when an ACL table is configured (non-null), the role must hold a
/// matching target pattern. Join-time resolution uses allow() on the same
/// policy objects.
bool permit_query(const EgressPolicy& policy, const AclTable* acl,
                  const Role& role, std::string_view target_name,
                  std::string_view target_egress);

}  // namespace ctxr
