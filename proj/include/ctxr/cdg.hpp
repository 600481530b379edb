#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ctxr/context.hpp"

namespace ctxr {

class composition_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class duplicate_association : public composition_error {
public:
  using composition_error::composition_error;
};

class no_open_association : public composition_error {
public:
  using composition_error::composition_error;
};

struct Association {
  std::string child, parent;
  Timestamp joined_at;
  std::optional<Timestamp> left_at;
};

/// Append-only record of join/leave events. Optionally persisted as
/// record-lines in a store branch so resolve_all can rebuild state after a
/// restart. At most one open association exists per (child, parent) pair.
class AssociationLog {
public:
  AssociationLog() = default;

  /// Attaches persistence and replays any existing history.
  void open(Store& store, const std::string& pool,
            const std::string& branch = "associations");

  void record_join(const std::string& child, const std::string& parent,
                   Timestamp at);
  void record_leave(const std::string& child, const std::string& parent,
                    Timestamp at);

  bool has_open(const std::string& child, const std::string& parent) const;
  /// Open associations in joined_at order.
  std::vector<Association> open_associations() const;
  const std::vector<Association>& history() const { return history_; }

private:
  void persist(const std::string& event, const std::string& child,
               const std::string& parent, Timestamp at);

  std::vector<Association> history_;  // closed and open
  Store* store_ = nullptr;
  std::string pool_, branch_;
};

/// Kind matching for sourcing intents: exact g/v/n with `*` wildcards per
/// component; `any` matches every kind. Direct selectors never kind-match.
bool match_kind(const SourcingIntent& selector, const Kind& kind);

/// Full intent test against a candidate child: direct selectors compare the
/// context name, the rest go through match_kind.
bool intent_matches(const SourcingIntent& intent, const ContextMeta& child);

/// One composition event's effect on ingress source lists.
struct CompositionDelta {
  struct IngressChange {
    std::string ctx, ingress;
    std::vector<ResolvedSource> added;
    std::vector<std::string> removed_labels;
  };
  std::vector<IngressChange> changes;

  bool changed() const { return !changes.empty(); }
};

/// Algorithm: for each ingress of the parent, for each sourcing intent
/// matching the child, every child egress with the intent's id whose policy
/// admits the parent's role becomes a resolved source with a rule-compiled
/// injection. The ingress restarts iff its sources changed.
CompositionDelta on_join(ContextMap& contexts, AssociationLog& log,
                         const std::string& child, const std::string& parent,
                         Timestamp now);

/// Removes every source referencing the child from every parent ingress and
/// closes the association.
CompositionDelta on_leave(ContextMap& contexts, AssociationLog& log,
                          const std::string& child, const std::string& parent,
                          Timestamp now);

/// Canonical source map: (context, ingress) -> sorted (child, egress,
/// injection repr) triples.
struct SourceEntry {
  std::string ctx, egress, injection_repr;

  auto operator<=>(const SourceEntry&) const = default;
};
using SourceMap = std::map<std::pair<std::string, std::string>,
                           std::vector<SourceEntry>>;

/// Recomputes every ingress's sources from scratch using only open
/// associations, intents, kinds, egresses and policies. Recovery path and
/// brute-force oracle for the incremental composition.
SourceMap resolve_all(const ContextMap& contexts, const AssociationLog& log);

/// Same computation with full source objects, for rebuilding runtime state.
std::map<std::pair<std::string, std::string>, std::vector<ResolvedSource>>
resolve_sources(const ContextMap& contexts, const AssociationLog& log);

/// Canonical form of the incrementally maintained state, for comparison.
SourceMap snapshot_source_map(const ContextMap& contexts);

}  // namespace ctxr
