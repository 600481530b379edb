#include "ctxr/runtime.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace ctxr {

namespace fs = std::filesystem;

namespace {

Timestamp wall_now() {
  return Timestamp{std::chrono::duration_cast<std::chrono::nanoseconds>(
                       std::chrono::system_clock::now().time_since_epoch())
                       .count()};
}

constexpr const char* kRuntimePool = "_runtime";

}  // namespace

Runtime::Runtime(Options opts) : opts_(std::move(opts)) {
  store_ = std::make_unique<Store>(
      Store::Options{opts_.data_dir / "store", opts_.failpoint});
  assoc_.open(*store_, kRuntimePool);
  comp_thread_.emplace([this](std::stop_token st) { composition_loop(st); });
  {
    std::promise<std::thread::id> id;
    auto fut = id.get_future();
    post_async([this, &id] { id.set_value(std::this_thread::get_id()); });
    comp_thread_id_ = fut.get();
  }
  boot_from_disk();
}

Runtime::~Runtime() {
  {
    std::lock_guard lk(comp_mu_);
    shutting_down_ = true;
  }
  store_->close();  // wakes watchers; blocked edges fail fast
  if (comp_thread_) {
    comp_thread_->request_stop();
    comp_cv_.notify_all();
    comp_thread_.reset();  // drains pending tasks, then joins
  }
  std::lock_guard lk(edges_mu_);
  for (auto& [_, ir] : ingresses_) {
    for (auto& e : ir.edges) e->stop();
    if (ir.aggregator) ir.aggregator->stop();
  }
  for (auto& [_, e] : view_edges_) e->stop();
}

void Runtime::composition_loop(std::stop_token st) {
  while (true) {
    std::packaged_task<void()> task;
    {
      std::unique_lock lk(comp_mu_);
      comp_cv_.wait(lk, [&] {
        return st.stop_requested() || !comp_queue_.empty();
      });
      if (st.stop_requested() && comp_queue_.empty()) return;
      task = std::move(comp_queue_.front());
      comp_queue_.pop_front();
    }
    comp_busy_.store(true);
    task();  // exceptions travel through the packaged_task future
    comp_busy_.store(false);
  }
}

template <typename F>
auto Runtime::run_serialized(F&& f) -> decltype(f()) {
  // Composition helpers may call back into the serialized surface (e.g.
  // auto-join inside apply); run inline when already on the loop thread.
  if (std::this_thread::get_id() == comp_thread_id_) return f();
  using R = decltype(f());
  std::packaged_task<void()> task;
  std::promise<R> result;
  auto fut = result.get_future();
  task = std::packaged_task<void()>([&] {
    try {
      if constexpr (std::is_void_v<R>) {
        f();
        result.set_value();
      } else {
        result.set_value(f());
      }
    } catch (...) {
      result.set_exception(std::current_exception());
    }
  });
  {
    std::lock_guard lk(comp_mu_);
    if (shutting_down_) throw store_closed();
    comp_queue_.push_back(std::move(task));
  }
  comp_cv_.notify_all();
  return fut.get();
}

void Runtime::post_async(std::function<void()> task) {
  {
    std::lock_guard lk(comp_mu_);
    if (shutting_down_) return;
    comp_queue_.emplace_back([t = std::move(task)]() mutable {
      try {
        t();
      } catch (...) {
        // async events (schema learning) must not take the loop down
      }
    });
  }
  comp_cv_.notify_all();
}

// ---------------------------------------------------------------------------
// Configuration

std::vector<Runtime::ApplyResult> Runtime::apply_text(const std::string& yaml) {
  std::vector<ApplyResult> results;
  for (auto& doc : parse_yaml_each(yaml)) {
    if (!doc.error.empty()) {
      results.push_back({"?", false, doc.error});
      continue;
    }
    ApplyResult r =
        run_serialized([&] { return apply_one(std::move(*doc.config)); });
    results.push_back(std::move(r));
  }
  return results;
}

Runtime::ApplyResult Runtime::apply_one(ContextConfig cfg) {
  std::string name = cfg.meta.name;
  try {
    std::shared_ptr<ContextState> existing;
    {
      std::shared_lock lk(contexts_mu_);
      auto it = contexts_.find(name);
      if (it != contexts_.end()) existing = it->second;
    }
    if (existing && existing->config_text == cfg.source_text)
      return {name, true, ""};  // identical document: no-op

    auto fresh = std::make_shared<ContextState>(cfg);
    if (existing) {
      // Reconfiguration: stop this context's pipelets and every ingress
      // sourcing from it, repoint changed egress views to a new generation,
      // then re-resolve everything from the association log.
      stop_edges_of(name);
      fresh->adopt_view_generations(*existing);
      for (const auto& e : fresh->egresses) {
        const EgressSpec* old = existing->egress(e.id);
        if (old && !(old->flow == e.flow)) {
          fresh->bump_view_generation(e.id);
        }
      }
    } else {
      fresh->recover_view_generations(*store_);
    }
    fresh->instantiate(*store_);
    fresh->recover_stamp(*store_);
    fresh->recover_observed_schemas(*store_);
    {
      std::unique_lock lk(contexts_mu_);
      contexts_[name] = fresh;
    }
    persist_config(cfg);
    rebuild_all_sources();
    if (opts_.auto_join_direct) maybe_auto_join(name);
    return {name, true, ""};
  } catch (const std::exception& e) {
    return {name, false, e.what()};
  }
}

void Runtime::persist_config(const ContextConfig& cfg) {
  fs::path dir = opts_.data_dir / "_configs";
  fs::create_directories(dir);
  std::ofstream out(dir / (cfg.meta.name + ".yaml"), std::ios::trunc);
  out << cfg.source_text;
}

void Runtime::boot_from_disk() {
  fs::path dir = opts_.data_dir / "_configs";
  if (!fs::exists(dir)) return;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".yaml") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  run_serialized([&] {
    for (const auto& f : files) {
      std::ifstream in(f);
      std::stringstream ss;
      ss << in.rdbuf();
      auto cfgs = ContextConfig::parse_yaml(ss.str());
      for (auto& cfg : cfgs) {
        auto state = std::make_shared<ContextState>(cfg);
        state->recover_view_generations(*store_);
        state->instantiate(*store_);
        state->recover_stamp(*store_);
        state->recover_observed_schemas(*store_);
        std::unique_lock lk(contexts_mu_);
        contexts_[state->meta.name] = state;
      }
    }
    rebuild_all_sources();
  });
}

void Runtime::maybe_auto_join(const std::string& applied) {
  std::vector<std::pair<std::string, std::string>> pairs;  // (child, parent)
  {
    std::shared_lock lk(contexts_mu_);
    auto it = contexts_.find(applied);
    if (it == contexts_.end()) return;
    // Direct intents of the new context naming existing contexts...
    for (const auto& ingress : it->second->ingresses) {
      for (const auto& intent : ingress.intents) {
        if (intent.selector != SourcingIntent::Selector::Direct) continue;
        if (contexts_.count(intent.direct_name))
          pairs.emplace_back(intent.direct_name, applied);
      }
    }
    // ...and direct intents elsewhere naming the new context.
    for (const auto& [name, ctx] : contexts_) {
      if (name == applied) continue;
      for (const auto& ingress : ctx->ingresses) {
        for (const auto& intent : ingress.intents) {
          if (intent.selector == SourcingIntent::Selector::Direct &&
              intent.direct_name == applied)
            pairs.emplace_back(applied, name);
        }
      }
    }
  }
  for (const auto& [child, parent] : pairs) {
    if (child == parent) continue;
    if (!assoc_.has_open(child, parent)) do_join(child, parent);
  }
}

// ---------------------------------------------------------------------------
// Composition

void Runtime::join(const std::string& child, const std::string& parent) {
  run_serialized([&] { do_join(child, parent); });
}

void Runtime::leave(const std::string& child, const std::string& parent) {
  run_serialized([&] { do_leave(child, parent); });
}

void Runtime::do_join(const std::string& child, const std::string& parent) {
  CompositionDelta delta;
  {
    std::unique_lock lk(contexts_mu_);
    delta = on_join(contexts_, assoc_, child, parent, wall_now());
  }
  for (const auto& change : delta.changes)
    rebuild_ingress(change.ctx, change.ingress);
}

void Runtime::do_leave(const std::string& child, const std::string& parent) {
  CompositionDelta delta;
  {
    std::unique_lock lk(contexts_mu_);
    delta = on_leave(contexts_, assoc_, child, parent, wall_now());
  }
  for (const auto& change : delta.changes)
    rebuild_ingress(change.ctx, change.ingress);
}

void Runtime::handle_schemas_learned(const std::string& child,
                                     const std::string& egress) {
  // Recompile injections for every ingress sourcing this egress; restart
  // only where the injected flow actually changed.
  std::vector<std::pair<std::string, std::string>> dirty;
  {
    std::unique_lock lk(contexts_mu_);
    auto child_it = contexts_.find(child);
    if (child_it == contexts_.end()) return;
    std::vector<Schema> schemas = child_it->second->advertised_schemas(egress);
    for (auto& [name, ctx] : contexts_) {
      for (const auto& ingress : ctx->ingresses) {
        IngressState& state = ctx->ingress_states[ingress.id];
        for (auto& src : state.sources) {
          if (src.ctx != child || src.egress != egress) continue;
          CompiledInjection fresh =
              compile_injection(ingress.rules, schemas, ingress.on_unmatched);
          if (fresh.repr() != src.injection.repr()) {
            src.injection = std::move(fresh);
            state.restart_count++;
            dirty.emplace_back(name, ingress.id);
          }
        }
      }
    }
  }
  for (const auto& [ctx, ingress] : dirty) rebuild_ingress(ctx, ingress);
}

void Runtime::rebuild_all_sources() {
  // Recompute resolved sources from the association log (the recovery path),
  // then restart the data plane wherever the canonical entries moved.
  std::vector<std::pair<std::string, std::string>> dirty;
  std::vector<std::shared_ptr<ContextState>> all;
  {
    std::unique_lock lk(contexts_mu_);
    auto resolved = resolve_sources(contexts_, assoc_);
    for (auto& [name, ctx] : contexts_) {
      all.push_back(ctx);
      for (const auto& ingress : ctx->ingresses) {
        IngressState& state = ctx->ingress_states[ingress.id];
        auto& fresh = resolved[{name, ingress.id}];
        auto canon = [](const std::vector<ResolvedSource>& v) {
          std::vector<std::string> out;
          for (const auto& s : v)
            out.push_back(s.label() + "|" + s.injection.repr());
          std::sort(out.begin(), out.end());
          return out;
        };
        bool changed = canon(state.sources) != canon(fresh);
        bool running;
        {
          std::lock_guard elk(edges_mu_);
          running = ingresses_.count({name, ingress.id}) > 0;
        }
        if (changed) {
          state.sources = std::move(fresh);
          state.restart_count++;
        }
        if (changed || (!running && !state.sources.empty()))
          dirty.emplace_back(name, ingress.id);
      }
    }
  }
  for (auto& ctx : all) {
    for (const auto& e : ctx->egresses) {
      bool running;
      {
        std::lock_guard elk(edges_mu_);
        running = view_edges_.count({ctx->meta.name, e.id}) > 0;
      }
      if (!running) start_view_edge(*ctx, e);
    }
  }
  for (const auto& [ctx, ingress] : dirty) rebuild_ingress(ctx, ingress);
}

void Runtime::stop_edges_of(const std::string& ctx) {
  std::lock_guard lk(edges_mu_);
  // The context's own pipelets...
  for (auto it = view_edges_.begin(); it != view_edges_.end();) {
    if (it->first.first == ctx) {
      it->second->stop();
      it = view_edges_.erase(it);
    } else {
      ++it;
    }
  }
  for (auto it = ingresses_.begin(); it != ingresses_.end();) {
    bool mine = it->first.first == ctx;
    bool sourcing = false;
    if (!mine) {
      for (const auto& e : it->second.edges)
        if (e->config().source_pool == ctx) sourcing = true;
    }
    if (mine || sourcing) {
      for (auto& e : it->second.edges) e->stop();
      if (it->second.aggregator) it->second.aggregator->stop();
      it = ingresses_.erase(it);
    } else {
      ++it;
    }
  }
}

void Runtime::start_view_edge(ContextState& ctx, const EgressSpec& egress) {
  if (!opts_.spawn_edges) return;
  std::string name = ctx.meta.name;
  std::string egress_id = egress.id;
  PipeletEdge::Config cfg;
  cfg.id = name + "/view/" + egress_id;
  cfg.store = store_.get();
  cfg.source_pool = name;
  cfg.source_branch = "main";
  cfg.target_pool = name;
  cfg.target_branch = ctx.view_branch(egress_id);
  cfg.source_label = name + "@main";
  cfg.role = PipeletEdge::Role::ViewEdge;
  cfg.flow = egress.flow;
  cfg.errors_pool = name;
  cfg.poll_interval = opts_.poll_interval;
  ContextState* ctx_ptr = &ctx;
  cfg.on_first_view_commit = [this, ctx_ptr, name,
                              egress_id](const std::vector<TypedRecord>& recs) {
    if (ctx_ptr->note_view_schemas(egress_id, recs))
      post_async([this, name, egress_id] {
        handle_schemas_learned(name, egress_id);
      });
  };
  auto edge = std::make_unique<PipeletEdge>(std::move(cfg));
  edge->start();
  std::lock_guard lk(edges_mu_);
  view_edges_[{name, egress_id}] = std::move(edge);
}

void Runtime::rebuild_ingress(const std::string& ctx_name,
                              const std::string& ingress_id) {
  if (!opts_.spawn_edges) return;
  auto key = std::make_pair(ctx_name, ingress_id);
  {
    std::lock_guard lk(edges_mu_);
    auto it = ingresses_.find(key);
    if (it != ingresses_.end()) {
      for (auto& e : it->second.edges) e->stop();
      if (it->second.aggregator) it->second.aggregator->stop();
      ingresses_.erase(it);
    }
  }

  std::shared_ptr<ContextState> ctx;
  {
    std::shared_lock lk(contexts_mu_);
    auto cit = contexts_.find(ctx_name);
    if (cit == contexts_.end()) return;
    ctx = cit->second;
  }
  const IngressSpec* spec = ctx->ingress(ingress_id);
  if (!spec) return;
  const IngressState& state = ctx->ingress_states[ingress_id];
  if (state.sources.empty()) return;

  IngressRuntime ir;
  ir.aggregator = std::make_unique<IngressAggregator>(IngressAggregator::Config{
      store_.get(), ctx.get(), ingress_id, spec->flow_agg, spec->patch_from});
  for (const auto& src : state.sources) {
    std::shared_ptr<ContextState> child;
    {
      std::shared_lock lk(contexts_mu_);
      auto cit = contexts_.find(src.ctx);
      if (cit == contexts_.end()) continue;
      child = cit->second;
    }
    PipeletEdge::Config cfg;
    cfg.id = ctx_name + "/" + ingress_id + "/" + src.label();
    cfg.store = store_.get();
    cfg.source_pool = src.ctx;
    cfg.source_branch = child->view_branch(src.egress);
    cfg.target_pool = ctx_name;
    cfg.target_branch = "main";
    cfg.source_label = src.label();
    cfg.role = PipeletEdge::Role::IngressEdge;
    cfg.flow = spec->flow;
    cfg.injection = src.injection;
    cfg.aggregator = ir.aggregator.get();
    cfg.errors_pool = ctx_name;
    cfg.disable_cursor_filter = opts_.disable_ingress_cursor_filter;
    cfg.poll_interval = opts_.poll_interval;
    ir.edges.push_back(std::make_unique<PipeletEdge>(std::move(cfg)));
  }
  ir.aggregator->start();
  for (auto& e : ir.edges) e->start();
  std::lock_guard lk(edges_mu_);
  ingresses_[key] = std::move(ir);
}

// ---------------------------------------------------------------------------
// Data plane

CommitId Runtime::load(const std::string& ctx_name,
                       std::vector<TypedRecord> records) {
  auto ctx = context(ctx_name);
  if (!ctx) throw unknown_target("unknown context '" + ctx_name + "'");
  return ctx_load(*ctx, *store_, std::move(records));
}

std::shared_ptr<ContextState> Runtime::context(const std::string& name) const {
  std::shared_lock lk(contexts_mu_);
  auto it = contexts_.find(name);
  return it == contexts_.end() ? nullptr : it->second;
}

Runtime::QueryResult Runtime::query(const std::string& target,
                                    const std::string& pipeline,
                                    const Role& role) {
  Pipeline p = Pipeline::parse(pipeline);

  if (target.rfind("kind:", 0) == 0) {
    std::string rest = target.substr(5);
    size_t at = rest.rfind('@');
    if (at == std::string::npos || at == 0 || at + 1 == rest.size())
      throw unknown_target("bad fan-out target '" + target + "'");
    auto intent = SourcingIntent::parse(rest);
    if (!intent || intent->selector == SourcingIntent::Selector::Direct)
      throw unknown_target("bad kind pattern in '" + target + "'");
    std::string egress_id = intent->egress;

    std::vector<std::shared_ptr<ContextState>> candidates;
    {
      std::shared_lock lk(contexts_mu_);
      for (const auto& [name, ctx] : contexts_) {
        if (!match_kind(*intent, ctx->meta.kind)) continue;
        if (!ctx->egress(egress_id)) continue;
        candidates.push_back(ctx);
      }
    }
    if (candidates.empty())
      throw unknown_target("no context matches '" + target + "'");

    QueryResult result;
    std::vector<TypedRecord> gathered;
    size_t permitted = 0;
    for (const auto& ctx : candidates) {
      const EgressSpec* spec = ctx->egress(egress_id);
      bool ok = permit_query(spec->effective_policy(), acl(), role,
                             ctx->meta.name, egress_id);
      log_access(role.id, ctx->meta.name + "@" + egress_id, ok);
      if (!ok) continue;  // fan-out touches only permitted egresses
      permitted++;
      uint64_t scanned = 0;
      auto records = store_->query(ctx->pool(), ctx->view_branch(egress_id),
                                   Pipeline{}, nullptr, &scanned);
      result.scanned += scanned;
      for (auto& r : records)
        gathered.push_back(
            r.with_field("_ctx", Value::string(ctx->meta.name)));
    }
    if (permitted == 0)
      throw access_denied("role '" + role.id + "' may not access any '" +
                          target + "'");
    result.records = eval(p, std::move(gathered));
    return result;
  }

  size_t at = target.rfind('@');
  if (at == std::string::npos || at == 0 || at + 1 == target.size())
    throw unknown_target("bad target '" + target + "' (want name@egress)");
  std::string name = target.substr(0, at);
  std::string egress_id = target.substr(at + 1);
  auto ctx = context(name);
  if (!ctx) throw unknown_target("unknown context '" + name + "'");
  QueryResult result;
  try {
    result.records = egress_query(*ctx, *store_, egress_id, p, role, acl(),
                                  nullptr, &result.scanned);
  } catch (const access_denied&) {
    log_access(role.id, target, false);
    throw;
  }
  log_access(role.id, target, true);
  return result;
}

Store::Watcher Runtime::watch(const std::string& ctx_name,
                              const std::string& egress_id, const Role& role) {
  auto ctx = context(ctx_name);
  if (!ctx) throw unknown_target("unknown context '" + ctx_name + "'");
  try {
    auto w = egress_watch(*ctx, *store_, egress_id, role, acl());
    log_access(role.id, ctx_name + "@" + egress_id, true);
    return w;
  } catch (const access_denied&) {
    log_access(role.id, ctx_name + "@" + egress_id, false);
    throw;
  }
}

std::vector<ContextMeta> Runtime::list_contexts() const {
  std::shared_lock lk(contexts_mu_);
  std::vector<ContextMeta> out;
  for (const auto& [_, ctx] : contexts_) out.push_back(ctx->meta);
  return out;
}

// ---------------------------------------------------------------------------
// Introspection

SourceMap Runtime::source_map() const {
  std::shared_lock lk(contexts_mu_);
  return snapshot_source_map(contexts_);
}

SourceMap Runtime::oracle_source_map() const {
  std::shared_lock lk(contexts_mu_);
  return resolve_all(contexts_, assoc_);
}

uint64_t Runtime::ingress_restarts(const std::string& ctx,
                                   const std::string& ingress) const {
  std::shared_lock lk(contexts_mu_);
  auto it = contexts_.find(ctx);
  if (it == contexts_.end()) return 0;
  auto sit = it->second->ingress_states.find(ingress);
  return sit == it->second->ingress_states.end() ? 0 : sit->second.restart_count;
}

bool Runtime::crashed() const {
  std::lock_guard lk(edges_mu_);
  for (const auto& [_, ir] : ingresses_) {
    if (ir.aggregator && ir.aggregator->crashed()) return true;
    for (const auto& e : ir.edges)
      if (e->crashed()) return true;
  }
  for (const auto& [_, e] : view_edges_)
    if (e->crashed()) return true;
  return false;
}

std::vector<std::string> Runtime::edge_errors() const {
  std::lock_guard lk(edges_mu_);
  std::vector<std::string> out;
  auto note = [&](const PipeletEdge& e) {
    if (!e.error().empty()) out.push_back(e.id() + ": " + e.error());
  };
  for (const auto& [_, ir] : ingresses_)
    for (const auto& e : ir.edges) note(*e);
  for (const auto& [_, e] : view_edges_) note(*e);
  return out;
}

bool Runtime::quiesce(std::chrono::milliseconds timeout) try {
  auto deadline = std::chrono::steady_clock::now() + timeout;
  int stable_passes = 0;
  while (std::chrono::steady_clock::now() < deadline) {
    bool settled = true;
    if (crashed()) return false;
    {
      std::lock_guard lk(edges_mu_);
      for (const auto& [_, e] : view_edges_) {
        int64_t head = int64_t(store_->next_commit_id(
            e->config().source_pool, e->config().source_branch));
        if (e->caught_up() + 1 != head) settled = false;
      }
      for (const auto& [_, ir] : ingresses_) {
        for (const auto& e : ir.edges) {
          int64_t head = int64_t(store_->next_commit_id(
              e->config().source_pool, e->config().source_branch));
          if (e->caught_up() + 1 != head) settled = false;
        }
        if (ir.aggregator && !ir.aggregator->idle()) settled = false;
      }
    }
    {
      std::lock_guard lk(comp_mu_);
      if (!comp_queue_.empty() || comp_busy_.load()) settled = false;
    }
    if (settled) {
      if (++stable_passes >= 2) return true;
    } else {
      stable_passes = 0;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  return false;
} catch (const store_error&) {
  return false;
}

void Runtime::log_access(const std::string& role, const std::string& target,
                         bool allowed) {
  std::lock_guard lk(access_mu_);
  access_log_.push_back({role, target, allowed});
}

std::vector<Runtime::AccessLogEntry> Runtime::access_log() const {
  std::lock_guard lk(access_mu_);
  return access_log_;
}

}  // namespace ctxr
