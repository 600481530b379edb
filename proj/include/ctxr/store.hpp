#pragma once

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "ctxr/flow.hpp"
#include "ctxr/record.hpp"

namespace ctxr {

using CommitId = uint64_t;
using MessageMap = std::map<std::string, std::string>;

class store_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Thrown by an armed failpoint to simulate a process kill between
/// persistence steps. Once raised, the whole store is dead: every further
/// operation throws and watchers wake with store_closed.
class crash_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class store_closed : public store_error {
public:
  store_closed() : store_error("store closed") {}
};

struct Commit {
  CommitId id = 0;
  std::vector<TypedRecord> records;
  MessageMap message;
};

/// Branch-structured, append-only commit journal with atomic loads.
///
/// On-disk layout: one directory per pool, one per branch. Each commit is a
/// record-lines file plus a key=value message sidecar, both written before
/// the commit id is appended to the branch journal. A reopen trusts only the
/// journal, so a crash at any point yields a prefix of the committed history.
class Store {
public:
  /// stage is one of "pre_data", "post_data", "post_msg", "post_journal".
  using Failpoint = std::function<void(std::string_view stage,
                                       std::string_view pool,
                                       std::string_view branch, CommitId id)>;

  struct Options {
    std::filesystem::path root;
    Failpoint failpoint;  // optional; test instrumentation
  };

  explicit Store(Options opts);
  ~Store();

  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  void close();
  bool closed() const;

  void create_pool(const std::string& pool);
  bool has_pool(const std::string& pool) const;
  std::vector<std::string> pool_names() const;
  /// Creating an existing branch is a no-op.
  void create_branch(const std::string& pool, const std::string& branch);
  bool has_branch(const std::string& pool, const std::string& branch) const;
  std::vector<std::string> branch_names(const std::string& pool) const;

  /// Atomic append. Empty record lists are rejected. With require_ts_order,
  /// every ts-bearing record must be >= the branch's running max ts and the
  /// batch itself must be non-decreasing.
  CommitId load(const std::string& pool, const std::string& branch,
                std::vector<TypedRecord> records, MessageMap message,
                bool require_ts_order = false);

  std::vector<Commit> commits(const std::string& pool, const std::string& branch,
                              CommitId from = 0) const;
  std::vector<TypedRecord> records(const std::string& pool,
                                   const std::string& branch) const;
  CommitId next_commit_id(const std::string& pool,
                          const std::string& branch) const;

  /// eval(pipeline, journal-order records). `scanned` reports how many
  /// records the journal contributed before the pipeline ran.
  std::vector<TypedRecord> query(const std::string& pool,
                                 const std::string& branch, const Pipeline& p,
                                 EvalReport* report = nullptr,
                                 uint64_t* scanned = nullptr) const;

  std::vector<std::pair<CommitId, MessageMap>> read_messages(
      const std::string& pool, const std::string& branch) const;
  /// Value of `key` from the highest-id commit whose message contains it.
  std::optional<std::string> latest_cursor(const std::string& pool,
                                           const std::string& branch,
                                           const std::string& key) const;

  /// Blocking subscription delivering every commit with id >= from exactly
  /// once, in id order.
  class Watcher {
  public:
    /// nullopt on timeout; throws store_closed once the store shuts down.
    std::optional<Commit> next(std::chrono::milliseconds timeout);

  private:
    friend class Store;
    struct State;
    std::shared_ptr<State> state_;
    CommitId pos_ = 0;
  };

  Watcher watch(const std::string& pool, const std::string& branch,
                CommitId from = 0) const;

private:
  struct BranchState;
  struct PoolState;
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace ctxr
