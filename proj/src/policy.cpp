#include "ctxr/policy.hpp"

namespace ctxr {

bool allow(const EgressPolicy& policy, const Role& role) {
  bool listed = policy.roles.count(role.id) > 0 || policy.roles.count("*") > 0;
  return policy.mode == EgressPolicy::Mode::Allow ? listed : !listed;
}

std::optional<TargetPattern> TargetPattern::parse(std::string_view text) {
  size_t at = text.find('@');
  if (at == std::string_view::npos || at == 0 || at + 1 == text.size())
    return std::nullopt;
  if (text.find('@', at + 1) != std::string_view::npos) return std::nullopt;
  return TargetPattern{std::string(text.substr(0, at)),
                       std::string(text.substr(at + 1))};
}

bool TargetPattern::matches(std::string_view target_name,
                            std::string_view target_egress) const {
  bool name_ok = name == "*" || name == target_name;
  bool egress_ok = egress == "*" || egress == target_egress;
  return name_ok && egress_ok;
}

void AclTable::add(const std::string& role, TargetPattern pattern) {
  entries_[role].push_back(std::move(pattern));
}

bool check_target(const AclTable& acl, const Role& role,
                  std::string_view target_name,
                  std::string_view target_egress) {
  auto it = acl.entries().find(role.id);
  if (it == acl.entries().end()) return false;  // deny by default
  for (const auto& p : it->second) {
    if (p.matches(target_name, target_egress)) return true;
  }
  return false;
}

bool permit_query(const EgressPolicy& policy, const AclTable* acl,
                  const Role& role, std::string_view target_name,
                  std::string_view target_egress) {
  if (!allow(policy, role)) return false;
  if (acl == nullptr) return true;  // no ACL regime configured
  return check_target(*acl, role, target_name, target_egress);
}

}  // namespace ctxr
