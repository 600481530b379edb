#include "ctxr/cdg.hpp"

#include <algorithm>

namespace ctxr {

void AssociationLog::open(Store& store, const std::string& pool,
                          const std::string& branch) {
  store_ = &store;
  pool_ = pool;
  branch_ = branch;
  store.create_pool(pool);
  store.create_branch(pool, branch);
  history_.clear();
  for (const auto& r : store.records(pool, branch)) {
    const Value* ev = r.find("event");
    const Value* child = r.find("child");
    const Value* parent = r.find("parent");
    const Value* at = r.find("at");
    if (!ev || !child || !parent || !at) continue;
    if (ev->as_string() == "join") {
      history_.push_back(Association{child->as_string(), parent->as_string(),
                                     at->as_time(), std::nullopt});
    } else {
      for (auto it = history_.rbegin(); it != history_.rend(); ++it) {
        if (it->child == child->as_string() &&
            it->parent == parent->as_string() && !it->left_at) {
          it->left_at = at->as_time();
          break;
        }
      }
    }
  }
}

void AssociationLog::persist(const std::string& event, const std::string& child,
                             const std::string& parent, Timestamp at) {
  if (!store_) return;
  store_->load(pool_, branch_,
               {TypedRecord::make({{"event", Value::string(event)},
                                   {"child", Value::string(child)},
                                   {"parent", Value::string(parent)},
                                   {"at", Value::time(at)}})},
               {});
}

void AssociationLog::record_join(const std::string& child,
                                 const std::string& parent, Timestamp at) {
  persist("join", child, parent, at);
  history_.push_back(Association{child, parent, at, std::nullopt});
}

void AssociationLog::record_leave(const std::string& child,
                                  const std::string& parent, Timestamp at) {
  persist("leave", child, parent, at);
  for (auto it = history_.rbegin(); it != history_.rend(); ++it) {
    if (it->child == child && it->parent == parent && !it->left_at) {
      it->left_at = at;
      return;
    }
  }
}

bool AssociationLog::has_open(const std::string& child,
                              const std::string& parent) const {
  for (auto it = history_.rbegin(); it != history_.rend(); ++it) {
    if (it->child == child && it->parent == parent) return !it->left_at;
  }
  return false;
}

std::vector<Association> AssociationLog::open_associations() const {
  std::vector<Association> out;
  for (const auto& a : history_) {
    if (!a.left_at) out.push_back(a);
  }
  return out;
}

bool match_kind(const SourcingIntent& selector, const Kind& kind) {
  switch (selector.selector) {
    case SourcingIntent::Selector::Any:
      return true;
    case SourcingIntent::Selector::Direct:
      return false;  // direct selectors bypass kind matching
    case SourcingIntent::Selector::KindPattern: {
      auto comp = [](const std::string& pat, const std::string& val) {
        return pat == "*" || pat == val;
      };
      return comp(selector.group_pat, kind.group) &&
             comp(selector.version_pat, kind.version) &&
             comp(selector.name_pat, kind.name);
    }
  }
  return false;
}

bool intent_matches(const SourcingIntent& intent, const ContextMeta& child) {
  if (intent.selector == SourcingIntent::Selector::Direct)
    return intent.direct_name == child.name;
  return match_kind(intent, child.kind);
}

namespace {

ContextState& ctx_ref(ContextMap& contexts, const std::string& name) {
  auto it = contexts.find(name);
  if (it == contexts.end())
    throw composition_error("unknown context '" + name + "'");
  return *it->second;
}

/// The Algorithm 1 inner loops for one (child, parent) pair: appends any
/// newly resolved sources for `ingress` to `out`, duplicate-free against
/// `existing`.
void resolve_pair_into(const ContextState& child, const ContextState& parent,
                       const IngressSpec& ingress,
                       const std::vector<ResolvedSource>& existing,
                       std::vector<ResolvedSource>& out) {
  for (const auto& intent : ingress.intents) {
    if (!intent_matches(intent, child.meta)) continue;
    for (const auto& egress : child.egresses) {
      if (egress.id != intent.egress) continue;
      if (!allow(egress.effective_policy(), parent.meta.role)) continue;
      auto already = [&](const std::vector<ResolvedSource>& v) {
        for (const auto& s : v)
          if (s.ctx == child.meta.name && s.egress == egress.id) return true;
        return false;
      };
      if (already(existing) || already(out)) continue;
      out.push_back(ResolvedSource{
          child.meta.name, egress.id,
          compile_injection(ingress.rules, child.advertised_schemas(egress.id),
                            ingress.on_unmatched)});
    }
  }
}

}  // namespace

CompositionDelta on_join(ContextMap& contexts, AssociationLog& log,
                         const std::string& child, const std::string& parent,
                         Timestamp now) {
  ContextState& y = ctx_ref(contexts, child);
  ContextState& x = ctx_ref(contexts, parent);
  if (log.has_open(child, parent))
    throw duplicate_association("open association " + child + " -> " + parent);

  CompositionDelta delta;
  for (const auto& ingress : x.ingresses) {
    IngressState& state = x.ingress_states[ingress.id];
    std::vector<ResolvedSource> added;
    resolve_pair_into(y, x, ingress, state.sources, added);
    if (!added.empty()) {
      CompositionDelta::IngressChange change{parent, ingress.id, added, {}};
      for (auto& s : added) state.sources.push_back(std::move(s));
      state.restart_count++;  // sources changed, pipelets restart
      delta.changes.push_back(std::move(change));
    }
  }
  log.record_join(child, parent, now);
  return delta;
}

CompositionDelta on_leave(ContextMap& contexts, AssociationLog& log,
                          const std::string& child, const std::string& parent,
                          Timestamp now) {
  ctx_ref(contexts, child);
  ContextState& x = ctx_ref(contexts, parent);
  if (!log.has_open(child, parent))
    throw no_open_association("no open association " + child + " -> " + parent);

  CompositionDelta delta;
  for (const auto& ingress : x.ingresses) {
    IngressState& state = x.ingress_states[ingress.id];
    CompositionDelta::IngressChange change{parent, ingress.id, {}, {}};
    for (const auto& s : state.sources) {
      if (s.ctx == child) change.removed_labels.push_back(s.label());
    }
    if (!change.removed_labels.empty()) {
      std::vector<ResolvedSource> kept;
      for (auto& s : state.sources) {
        if (s.ctx != child) kept.push_back(std::move(s));
      }
      state.sources = std::move(kept);
      state.restart_count++;
      delta.changes.push_back(std::move(change));
    }
  }
  log.record_leave(child, parent, now);
  return delta;
}

std::map<std::pair<std::string, std::string>, std::vector<ResolvedSource>>
resolve_sources(const ContextMap& contexts, const AssociationLog& log) {
  std::map<std::pair<std::string, std::string>, std::vector<ResolvedSource>>
      scratch;
  for (const auto& [name, ctx] : contexts) {
    for (const auto& ingress : ctx->ingresses) scratch[{name, ingress.id}];
  }
  for (const Association& assoc : log.open_associations()) {
    auto child_it = contexts.find(assoc.child);
    auto parent_it = contexts.find(assoc.parent);
    if (child_it == contexts.end() || parent_it == contexts.end()) continue;
    const ContextState& y = *child_it->second;
    const ContextState& x = *parent_it->second;
    for (const auto& ingress : x.ingresses) {
      auto& slot = scratch[{assoc.parent, ingress.id}];
      std::vector<ResolvedSource> added;
      resolve_pair_into(y, x, ingress, slot, added);
      for (auto& s : added) slot.push_back(std::move(s));
    }
  }
  return scratch;
}

SourceMap resolve_all(const ContextMap& contexts, const AssociationLog& log) {
  SourceMap out;
  for (auto& [key, sources] : resolve_sources(contexts, log)) {
    std::vector<SourceEntry>& entries = out[key];
    for (const auto& s : sources)
      entries.push_back(SourceEntry{s.ctx, s.egress, s.injection.repr()});
    std::sort(entries.begin(), entries.end());
  }
  return out;
}

SourceMap snapshot_source_map(const ContextMap& contexts) {
  SourceMap out;
  for (const auto& [name, ctx] : contexts) {
    for (const auto& [ingress_id, state] : ctx->ingress_states) {
      std::vector<SourceEntry>& entries = out[{name, ingress_id}];
      for (const auto& s : state.sources)
        entries.push_back(SourceEntry{s.ctx, s.egress, s.injection.repr()});
      std::sort(entries.begin(), entries.end());
    }
  }
  return out;
}

}  // namespace ctxr
