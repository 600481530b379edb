#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "ctxr/context.hpp"
#include "ctxr/flow.hpp"
#include "ctxr/rules.hpp"
#include "ctxr/store.hpp"

namespace ctxr {

/// Commit-message key carrying the last transferred source ts for one edge.
std::string cursor_key(const std::string& source_label);

/// Cached last-seen source ts from the target branch's commit messages;
/// Timestamp::min() when the edge has never committed (transfer everything).
Timestamp recover_cursor(const Store& store, const std::string& target_pool,
                         const std::string& target_branch,
                         const std::string& source_label);

/// One batch handed from a source edge to its ingress aggregator. Warm
/// batches carry replayed history: they feed flow_agg state and commit
/// nothing.
struct IngressBatch {
  std::string source_label;
  Timestamp max_source_ts;
  std::vector<TypedRecord> records;
  bool warm = false;
};

/// Merges batches from all source edges of one ingress, applies flow_agg
/// incrementally, stamps ts/event_ts, patches lineage, and commits to the
/// context's main branch with one cursor key per contributing source.
class IngressAggregator {
public:
  struct Config {
    Store* store = nullptr;
    ContextState* ctx = nullptr;
    std::string ingress_id;
    Pipeline flow_agg;
    bool patch_from = false;
  };

  explicit IngressAggregator(Config cfg);
  ~IngressAggregator();

  void start();
  void stop();

  void enqueue(IngressBatch batch);
  bool idle() const;
  bool crashed() const { return crashed_.load(); }
  bool flow_agg_stateful() const { return flow_agg_stateful_; }

private:
  void run(std::stop_token st);
  void process_cycle(std::vector<IngressBatch> batches);

  Config cfg_;
  IncrementalEval inc_;
  bool flow_agg_stateful_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<IngressBatch> queue_;
  std::atomic<bool> busy_{false};
  std::atomic<bool> crashed_{false};
  std::optional<std::jthread> thread_;
};

/// One data-sync edge: watches a source branch, drops records at or below the
/// recovered cursor, applies the per-source pipeline, and either hands the
/// batch to the ingress aggregator or commits it to the egress view branch.
/// Commit and cursor update are one atomic load.
class PipeletEdge {
public:
  enum class Role { IngressEdge, ViewEdge };

  struct Config {
    std::string id;
    Store* store = nullptr;
    std::string source_pool, source_branch;
    std::string target_pool, target_branch;  // view edges only
    std::string source_label;                // name@egress (name@main for views)
    Role role = Role::ViewEdge;
    Pipeline flow;                        // per-source flow or egress flow
    std::optional<CompiledInjection> injection;  // ingress edges
    IngressAggregator* aggregator = nullptr;     // ingress edges
    std::string errors_pool;  // context pool receiving rejected records
    /// Called with the records of the first commit to the view branch.
    std::function<void(const std::vector<TypedRecord>&)> on_first_view_commit;
    bool disable_cursor_filter = false;  // fault-injection negative control
    std::chrono::milliseconds poll_interval{100};
  };

  explicit PipeletEdge(Config cfg);
  ~PipeletEdge();

  void start();
  void stop();

  const std::string& id() const { return cfg_.id; }
  const std::string& source_label() const { return cfg_.source_label; }
  /// Highest source commit id fully processed (handed off or committed).
  int64_t caught_up() const { return caught_up_.load(); }
  bool crashed() const { return crashed_.load(); }
  bool stopped() const { return stopped_.load(); }
  std::string error() const;
  uint64_t transferred() const { return transferred_.load(); }

  const Config& config() const { return cfg_; }

private:
  void run(std::stop_token st);
  void process_commit(const Commit& commit);
  void route_rejects(const EvalReport& report);

  Config cfg_;
  IncrementalEval inc_;
  Timestamp cursor_ = Timestamp::min();
  std::atomic<int64_t> caught_up_{-1};
  std::atomic<uint64_t> transferred_{0};
  std::atomic<bool> crashed_{false};
  std::atomic<bool> stopped_{false};
  mutable std::mutex err_mu_;
  std::string error_;
  std::optional<std::jthread> thread_;
};

}  // namespace ctxr
