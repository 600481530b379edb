#include "ctxr/pipelet.hpp"

#include <algorithm>

namespace ctxr {

std::string cursor_key(const std::string& source_label) {
  return "cursor." + source_label;
}

Timestamp recover_cursor(const Store& store, const std::string& target_pool,
                         const std::string& target_branch,
                         const std::string& source_label) {
  auto value = store.latest_cursor(target_pool, target_branch,
                                   cursor_key(source_label));
  if (!value) return Timestamp::min();
  auto ts = parse_rfc3339(*value);
  if (!ts) throw store_error("unparseable cursor value '" + *value + "'");
  return *ts;
}

namespace {

std::optional<Timestamp> record_ts(const TypedRecord& r) {
  const Value* v = r.find("ts");
  if (v && v->is_time()) return v->as_time();
  return std::nullopt;
}

/// Appends the source label to the record's `from` lineage array, creating
/// it if absent and widening a scalar string into an array.
TypedRecord patch_from_field(const TypedRecord& rec, const std::string& label) {
  ValueArray lineage;
  if (const Value* existing = rec.find("from")) {
    if (existing->is_array()) {
      lineage = existing->as_array();
    } else if (existing->is_string()) {
      lineage.push_back(*existing);
    }
  }
  lineage.push_back(Value::string(label));
  return rec.with_field("from", Value::array(std::move(lineage)));
}

void commit_rejects(Store& store, const std::string& errors_pool,
                    const EvalReport& report) {
  if (report.logged.empty()) return;
  if (!store.has_pool(errors_pool)) return;
  store.create_branch(errors_pool, "errors");
  std::vector<TypedRecord> out;
  out.reserve(report.logged.size());
  for (const auto& [reason, rec] : report.logged)
    out.push_back(rec.with_field("_reason", Value::string(reason)));
  store.load(errors_pool, "errors", std::move(out), {});
}

}  // namespace

// ---------------------------------------------------------------------------
// IngressAggregator

IngressAggregator::IngressAggregator(Config cfg)
    : cfg_(std::move(cfg)),
      inc_(cfg_.flow_agg),
      flow_agg_stateful_(cfg_.flow_agg.stateful()) {}

IngressAggregator::~IngressAggregator() { stop(); }

void IngressAggregator::start() {
  thread_.emplace([this](std::stop_token st) { run(st); });
}

void IngressAggregator::stop() {
  if (!thread_) return;
  thread_->request_stop();
  cv_.notify_all();
  thread_.reset();  // joins
}

void IngressAggregator::enqueue(IngressBatch batch) {
  {
    std::lock_guard lk(mu_);
    queue_.push_back(std::move(batch));
  }
  cv_.notify_all();
}

bool IngressAggregator::idle() const {
  std::lock_guard lk(mu_);
  return queue_.empty() && !busy_.load();
}

void IngressAggregator::run(std::stop_token st) {
  while (!st.stop_requested()) {
    std::vector<IngressBatch> cycle;
    {
      std::unique_lock lk(mu_);
      cv_.wait_for(lk, std::chrono::milliseconds(50), [&] {
        return st.stop_requested() || !queue_.empty();
      });
      if (st.stop_requested()) return;
      if (queue_.empty()) continue;
      busy_.store(true);
      while (!queue_.empty()) {
        cycle.push_back(std::move(queue_.front()));
        queue_.pop_front();
      }
    }
    try {
      process_cycle(std::move(cycle));
    } catch (const crash_error&) {
      crashed_.store(true);
      busy_.store(false);
      return;
    } catch (const store_closed&) {
      busy_.store(false);
      return;
    }
    busy_.store(false);
  }
}

void IngressAggregator::process_cycle(std::vector<IngressBatch> batches) {
  std::vector<TypedRecord> out;
  MessageMap message;
  EvalReport report;
  for (auto& batch : batches) {
    if (batch.warm) {
      inc_.warm(std::move(batch.records));
      continue;
    }
    std::vector<TypedRecord> derived = inc_.push(std::move(batch.records), &report);
    for (auto& rec : derived) {
      Timestamp ts = cfg_.ctx->stamp_next();
      TypedRecord stamped = rec.with_field("ts", Value::time(ts));
      const Value* ev = stamped.find("event_ts");
      if (!ev || !ev->is_time())
        stamped = stamped.with_field("event_ts", Value::time(ts));
      if (cfg_.patch_from)
        stamped = patch_from_field(stamped, batch.source_label);
      out.push_back(std::move(stamped));
    }
    // One cursor key per contributing source; the max wins when a source
    // contributed several batches this cycle.
    std::string key = cursor_key(batch.source_label);
    std::string value = format_rfc3339(batch.max_source_ts);
    auto it = message.find(key);
    if (it == message.end() || it->second < value) message[key] = value;
  }
  commit_rejects(*cfg_.store, cfg_.ctx->pool(), report);
  if (!out.empty())
    cfg_.store->load(cfg_.ctx->pool(), "main", std::move(out), std::move(message),
                     true);
}

// ---------------------------------------------------------------------------
// PipeletEdge

PipeletEdge::PipeletEdge(Config cfg) : cfg_(std::move(cfg)), inc_(cfg_.flow) {}

PipeletEdge::~PipeletEdge() { stop(); }

void PipeletEdge::start() {
  thread_.emplace([this](std::stop_token st) { run(st); });
}

void PipeletEdge::stop() {
  if (!thread_) return;
  thread_->request_stop();
  thread_.reset();  // joins at the batch boundary
}

std::string PipeletEdge::error() const {
  std::lock_guard lk(err_mu_);
  return error_;
}

void PipeletEdge::run(std::stop_token st) {
  try {
    cursor_ = recover_cursor(*cfg_.store, cfg_.target_pool, cfg_.target_branch,
                             cfg_.source_label);
    auto watcher = cfg_.store->watch(cfg_.source_pool, cfg_.source_branch, 0);
    while (!st.stop_requested()) {
      auto commit = watcher.next(cfg_.poll_interval);
      if (!commit) continue;
      process_commit(*commit);
      caught_up_.store(int64_t(commit->id));
    }
  } catch (const crash_error&) {
    crashed_.store(true);
  } catch (const store_closed&) {
    // clean shutdown path
  } catch (const std::exception& e) {
    std::lock_guard lk(err_mu_);
    error_ = e.what();
  }
  stopped_.store(true);
}

void PipeletEdge::process_commit(const Commit& commit) {
  bool need_state =
      cfg_.flow.stateful() ||
      (cfg_.aggregator != nullptr && cfg_.aggregator->flow_agg_stateful());

  // Source ts is strictly increasing within a branch, so a commit sits
  // entirely at or below the cursor (already transferred; replay for state
  // only) or entirely above it.
  std::vector<TypedRecord> batch;
  Timestamp max_ts = cursor_;
  bool already_transferred = true;
  for (const auto& rec : commit.records) {
    auto ts = record_ts(rec);
    if (!cfg_.disable_cursor_filter && ts && *ts <= cursor_) continue;
    already_transferred = false;
    batch.push_back(rec);
    if (ts && *ts > max_ts) max_ts = *ts;
  }

  if (already_transferred) {
    if (need_state && !commit.records.empty()) {
      std::vector<TypedRecord> survivors;
      EvalReport sink;
      for (const auto& rec : commit.records) {
        TypedRecord r = rec;
        if (cfg_.injection) {
          auto kept =
              apply_record_local(cfg_.injection->prefix_for(r.schema()), r, sink);
          if (!kept) continue;
          r = std::move(*kept);
        }
        survivors.push_back(std::move(r));
      }
      auto warmed = inc_.warm(std::move(survivors));
      if (cfg_.aggregator && !warmed.empty())
        cfg_.aggregator->enqueue(IngressBatch{cfg_.source_label, max_ts,
                                              std::move(warmed), true});
    }
    return;
  }

  EvalReport report;
  std::vector<TypedRecord> staged;
  for (auto& rec : batch) {
    if (cfg_.injection) {
      const Pipeline& prefix = cfg_.injection->prefix_for(rec.schema());
      auto kept = apply_record_local(prefix, std::move(rec), report);
      if (!kept) continue;
      staged.push_back(std::move(*kept));
    } else {
      staged.push_back(std::move(rec));
    }
  }
  std::vector<TypedRecord> out = inc_.push(std::move(staged), &report);
  route_rejects(report);

  if (cfg_.role == Role::ViewEdge) {
    if (!out.empty()) {
      bool first = cfg_.store->next_commit_id(cfg_.target_pool,
                                              cfg_.target_branch) == 0;
      MessageMap message{{cursor_key(cfg_.source_label), format_rfc3339(max_ts)}};
      std::vector<TypedRecord> committed = out;
      cfg_.store->load(cfg_.target_pool, cfg_.target_branch, std::move(out),
                       std::move(message), true);
      transferred_ += committed.size();
      if (first && cfg_.on_first_view_commit) cfg_.on_first_view_commit(committed);
    }
  } else if (!out.empty()) {
    transferred_ += out.size();
    cfg_.aggregator->enqueue(
        IngressBatch{cfg_.source_label, max_ts, std::move(out)});
  }
  cursor_ = max_ts;
}

void PipeletEdge::route_rejects(const EvalReport& report) {
  if (cfg_.errors_pool.empty()) return;
  commit_rejects(*cfg_.store, cfg_.errors_pool, report);
}

}  // namespace ctxr
