#pragma once

#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include "ctxr/cdg.hpp"
#include "ctxr/context.hpp"
#include "ctxr/pipelet.hpp"
#include "ctxr/policy.hpp"
#include "ctxr/store.hpp"

namespace ctxr {

/// Single-process runtime hosting all contexts: embedded registry, the
/// serialized coupler event loop, and the pipelet data plane. Composition
/// events (apply/join/leave and schema learning) run strictly in FIFO order
/// on one thread; data-plane reads and writes go through the store's
/// reader/writer contract.
class Runtime {
public:
  struct Options {
    std::filesystem::path data_dir;
    Store::Failpoint failpoint;
    std::optional<AclTable> acl;  // enables the ACL regime when set
    std::string default_role = "admin";
    bool spawn_edges = true;  // false: composition-only (no data plane)
    /// Fault-injection negative control: ingress edges transfer everything.
    bool disable_ingress_cursor_filter = false;
    std::chrono::milliseconds poll_interval{100};
    /// Direct name@egress intents associate automatically once both contexts
    /// exist (recorded as ordinary associations).
    bool auto_join_direct = true;
  };

  explicit Runtime(Options opts);
  ~Runtime();

  Runtime(const Runtime&) = delete;
  Runtime& operator=(const Runtime&) = delete;

  // -- declarative configuration ------------------------------------------
  struct ApplyResult {
    std::string name;  // context name, or "?" for unparseable documents
    bool applied = false;
    std::string error;
  };
  /// Create-or-update from one or more YAML documents. Bad documents are
  /// reported and skipped; the rest apply. Identical re-application is a
  /// no-op without pipelet restarts.
  std::vector<ApplyResult> apply_text(const std::string& yaml);

  // -- composition ----------------------------------------------------------
  void join(const std::string& child, const std::string& parent);
  void leave(const std::string& child, const std::string& parent);

  // -- data plane -----------------------------------------------------------
  CommitId load(const std::string& ctx, std::vector<TypedRecord> records);

  struct QueryResult {
    std::vector<TypedRecord> records;
    uint64_t scanned = 0;  // records read before the pipeline ran
  };
  /// target := NAME@EGRESS | kind:PATTERN@EGRESS (fan-out). Fan-out gathers
  /// every matching, policy-permitted view, tags records with `_ctx`, and
  /// evaluates the pipeline once over the concatenation.
  QueryResult query(const std::string& target, const std::string& pipeline,
                    const Role& role);
  Store::Watcher watch(const std::string& ctx, const std::string& egress,
                       const Role& role);

  std::vector<ContextMeta> list_contexts() const;
  std::shared_ptr<ContextState> context(const std::string& name) const;

  // -- introspection (tests, harness, CLI) ----------------------------------
  SourceMap source_map() const;
  SourceMap oracle_source_map() const;
  /// Blocks until every pipelet has drained its source and all aggregators
  /// are idle, stable across two passes. False on timeout.
  bool quiesce(std::chrono::milliseconds timeout = std::chrono::seconds(30));
  bool crashed() const;
  std::vector<std::string> edge_errors() const;
  uint64_t ingress_restarts(const std::string& ctx,
                            const std::string& ingress) const;

  struct AccessLogEntry {
    std::string role, target;
    bool allowed;
  };
  std::vector<AccessLogEntry> access_log() const;

  Store& store() { return *store_; }
  const Options& options() const { return opts_; }
  const AclTable* acl() const { return opts_.acl ? &*opts_.acl : nullptr; }

private:
  struct IngressRuntime {
    std::unique_ptr<IngressAggregator> aggregator;
    std::vector<std::unique_ptr<PipeletEdge>> edges;
  };

  // Composition-thread-only helpers.
  ApplyResult apply_one(ContextConfig cfg);
  void do_join(const std::string& child, const std::string& parent);
  void do_leave(const std::string& child, const std::string& parent);
  void handle_schemas_learned(const std::string& child,
                              const std::string& egress);
  void rebuild_ingress(const std::string& ctx, const std::string& ingress_id);
  void start_view_edge(ContextState& ctx, const EgressSpec& egress);
  void stop_edges_of(const std::string& ctx);
  void rebuild_all_sources();
  void maybe_auto_join(const std::string& applied);
  void persist_config(const ContextConfig& cfg);
  void boot_from_disk();

  template <typename F>
  auto run_serialized(F&& f) -> decltype(f());
  void post_async(std::function<void()> task);
  void composition_loop(std::stop_token st);

  void log_access(const std::string& role, const std::string& target,
                  bool allowed);

  Options opts_;
  std::unique_ptr<Store> store_;

  mutable std::shared_mutex contexts_mu_;
  ContextMap contexts_;
  AssociationLog assoc_;

  // Edge containers are mutated only on the composition thread; the lock
  // covers readers (quiesce, crashed, errors).
  mutable std::mutex edges_mu_;
  std::map<std::pair<std::string, std::string>, IngressRuntime> ingresses_;
  std::map<std::pair<std::string, std::string>, std::unique_ptr<PipeletEdge>>
      view_edges_;
  std::atomic<bool> comp_busy_{false};

  mutable std::mutex access_mu_;
  std::vector<AccessLogEntry> access_log_;

  mutable std::mutex comp_mu_;
  std::condition_variable comp_cv_;
  std::deque<std::packaged_task<void()>> comp_queue_;
  std::optional<std::jthread> comp_thread_;
  std::thread::id comp_thread_id_;
  bool shutting_down_ = false;
};

}  // namespace ctxr
