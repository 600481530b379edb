#include "ctxr/store.hpp"

#include <atomic>
#include <fstream>
#include <shared_mutex>
#include <sstream>

namespace ctxr {

namespace fs = std::filesystem;

namespace {

std::string commit_basename(CommitId id) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08llu", static_cast<unsigned long long>(id));
  return buf;
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw store_error("cannot write " + p.string());
  out << content;
  out.flush();
  if (!out) throw store_error("write failed for " + p.string());
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw store_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::optional<Timestamp> record_ts(const TypedRecord& r) {
  const Value* v = r.find("ts");
  if (v && v->is_time()) return v->as_time();
  return std::nullopt;
}

}  // namespace

// Watchers borrow the branch state; they must not outlive the Store.
struct Store::Watcher::State {
  std::vector<std::shared_ptr<const Commit>>* commits = nullptr;
  std::atomic<bool>* closed = nullptr;
  std::mutex* branch_mu = nullptr;
  std::condition_variable* branch_cv = nullptr;
};

struct Store::BranchState {
  std::string pool, name;
  fs::path dir;
  mutable std::mutex mu;
  mutable std::condition_variable cv;
  std::vector<std::shared_ptr<const Commit>> commits;
  Timestamp max_ts = Timestamp::min();  // over ts-bearing records
};

struct Store::PoolState {
  std::string name;
  fs::path dir;
  mutable std::mutex mu;  // branch creation
  std::map<std::string, std::unique_ptr<BranchState>> branches;
};

struct Store::Impl {
  fs::path root;
  Failpoint failpoint;
  mutable std::shared_mutex pools_mu;
  std::map<std::string, std::unique_ptr<PoolState>> pools;
  std::atomic<bool> closed{false};

  void check_open() const {
    if (closed.load()) throw store_closed();
  }

  void hit(std::string_view stage, std::string_view pool,
           std::string_view branch, CommitId id) {
    if (failpoint) failpoint(stage, pool, branch, id);
  }

  PoolState& pool_ref(const std::string& name) const {
    std::shared_lock lk(pools_mu);
    auto it = pools.find(name);
    if (it == pools.end()) throw store_error("unknown pool '" + name + "'");
    return *it->second;
  }

  BranchState& branch_ref(const std::string& pool,
                          const std::string& branch) const {
    PoolState& p = pool_ref(pool);
    std::lock_guard lk(p.mu);
    auto it = p.branches.find(branch);
    if (it == p.branches.end())
      throw store_error("unknown branch '" + pool + "/" + branch + "'");
    return *it->second;
  }

  void open_branch(PoolState& pool, const std::string& name) {
    auto b = std::make_unique<BranchState>();
    b->pool = pool.name;
    b->name = name;
    b->dir = pool.dir / name;
    fs::create_directories(b->dir);
    fs::path journal = b->dir / "journal";
    if (fs::exists(journal)) {
      std::istringstream in(read_file(journal));
      std::string line;
      CommitId expect = 0;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        CommitId id = std::stoull(line);
        if (id != expect)
          throw store_error("journal gap in " + b->dir.string() + " at " + line);
        expect++;
        auto commit = std::make_shared<Commit>();
        commit->id = id;
        std::string base = commit_basename(id);
        commit->records = parse_lines(read_file(b->dir / (base + ".rl")));
        std::istringstream ms(read_file(b->dir / (base + ".msg")));
        std::string ml;
        while (std::getline(ms, ml)) {
          if (ml.empty()) continue;
          size_t eq = ml.find('=');
          if (eq == std::string::npos)
            throw store_error("bad message line in " + base + ".msg");
          commit->message[ml.substr(0, eq)] = ml.substr(eq + 1);
        }
        for (const auto& r : commit->records) {
          if (auto ts = record_ts(r); ts && *ts > b->max_ts) b->max_ts = *ts;
        }
        b->commits.push_back(std::move(commit));
      }
    }
    pool.branches[name] = std::move(b);
  }

  void open_pool(const std::string& name) {
    auto p = std::make_unique<PoolState>();
    p->name = name;
    p->dir = root / name;
    fs::create_directories(p->dir);
    for (const auto& e : fs::directory_iterator(p->dir)) {
      if (e.is_directory()) open_branch(*p, e.path().filename().string());
    }
    if (!p->branches.count("main")) open_branch(*p, "main");
    pools[name] = std::move(p);
  }
};

Store::Store(Options opts) : impl_(std::make_unique<Impl>()) {
  impl_->root = opts.root;
  impl_->failpoint = std::move(opts.failpoint);
  fs::create_directories(impl_->root);
  for (const auto& e : fs::directory_iterator(impl_->root)) {
    if (e.is_directory()) impl_->open_pool(e.path().filename().string());
  }
}

Store::~Store() { close(); }

void Store::close() {
  if (impl_->closed.exchange(true)) return;
  std::shared_lock lk(impl_->pools_mu);
  for (auto& [_, pool] : impl_->pools) {
    std::lock_guard plk(pool->mu);
    for (auto& [__, branch] : pool->branches) {
      std::lock_guard blk(branch->mu);
      branch->cv.notify_all();
    }
  }
}

bool Store::closed() const { return impl_->closed.load(); }

void Store::create_pool(const std::string& pool) {
  impl_->check_open();
  std::unique_lock lk(impl_->pools_mu);
  if (impl_->pools.count(pool)) return;
  impl_->open_pool(pool);
}

bool Store::has_pool(const std::string& pool) const {
  impl_->check_open();
  std::shared_lock lk(impl_->pools_mu);
  return impl_->pools.count(pool) > 0;
}

std::vector<std::string> Store::pool_names() const {
  impl_->check_open();
  std::shared_lock lk(impl_->pools_mu);
  std::vector<std::string> out;
  for (const auto& [n, _] : impl_->pools) out.push_back(n);
  return out;
}

void Store::create_branch(const std::string& pool, const std::string& branch) {
  impl_->check_open();
  PoolState& p = impl_->pool_ref(pool);
  std::lock_guard lk(p.mu);
  if (p.branches.count(branch)) return;
  impl_->open_branch(p, branch);
}

bool Store::has_branch(const std::string& pool, const std::string& branch) const {
  impl_->check_open();
  PoolState& p = impl_->pool_ref(pool);
  std::lock_guard lk(p.mu);
  return p.branches.count(branch) > 0;
}

std::vector<std::string> Store::branch_names(const std::string& pool) const {
  impl_->check_open();
  PoolState& p = impl_->pool_ref(pool);
  std::lock_guard lk(p.mu);
  std::vector<std::string> out;
  for (const auto& [n, _] : p.branches) out.push_back(n);
  return out;
}

CommitId Store::load(const std::string& pool, const std::string& branch,
                     std::vector<TypedRecord> records, MessageMap message,
                     bool require_ts_order) {
  impl_->check_open();
  if (records.empty()) throw store_error("empty-commit");
  for (const auto& [k, v] : message) {
    if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos ||
        v.find('\n') != std::string::npos)
      throw store_error("invalid message key/value");
  }
  BranchState& b = impl_->branch_ref(pool, branch);
  std::unique_lock lk(b.mu);
  impl_->check_open();

  if (require_ts_order) {
    Timestamp last = b.max_ts;
    for (const auto& r : records) {
      if (auto ts = record_ts(r)) {
        if (*ts < last)
          throw store_error("ts order violation on " + pool + "/" + branch);
        last = *ts;
      }
    }
  }

  auto commit = std::make_shared<Commit>();
  commit->id = b.commits.size();
  commit->records = std::move(records);
  commit->message = std::move(message);

  std::string base = commit_basename(commit->id);
  impl_->hit("pre_data", pool, branch, commit->id);
  write_file(b.dir / (base + ".rl"), serialize_lines(commit->records));
  impl_->hit("post_data", pool, branch, commit->id);
  std::string msg;
  for (const auto& [k, v] : commit->message) msg += k + "=" + v + "\n";
  write_file(b.dir / (base + ".msg"), msg);
  impl_->hit("post_msg", pool, branch, commit->id);
  {
    std::ofstream journal(b.dir / "journal", std::ios::app | std::ios::binary);
    if (!journal) throw store_error("cannot append journal");
    journal << commit->id << "\n";
    journal.flush();
    if (!journal) throw store_error("journal append failed");
  }
  impl_->hit("post_journal", pool, branch, commit->id);

  for (const auto& r : commit->records) {
    if (auto ts = record_ts(r); ts && *ts > b.max_ts) b.max_ts = *ts;
  }
  CommitId id = commit->id;
  b.commits.push_back(std::move(commit));
  b.cv.notify_all();
  return id;
}

std::vector<Commit> Store::commits(const std::string& pool,
                                   const std::string& branch,
                                   CommitId from) const {
  impl_->check_open();
  BranchState& b = impl_->branch_ref(pool, branch);
  std::lock_guard lk(b.mu);
  std::vector<Commit> out;
  for (CommitId i = from; i < b.commits.size(); i++) out.push_back(*b.commits[i]);
  return out;
}

std::vector<TypedRecord> Store::records(const std::string& pool,
                                        const std::string& branch) const {
  impl_->check_open();
  BranchState& b = impl_->branch_ref(pool, branch);
  std::lock_guard lk(b.mu);
  std::vector<TypedRecord> out;
  for (const auto& c : b.commits)
    out.insert(out.end(), c->records.begin(), c->records.end());
  return out;
}

CommitId Store::next_commit_id(const std::string& pool,
                               const std::string& branch) const {
  impl_->check_open();
  BranchState& b = impl_->branch_ref(pool, branch);
  std::lock_guard lk(b.mu);
  return b.commits.size();
}

std::vector<TypedRecord> Store::query(const std::string& pool,
                                      const std::string& branch,
                                      const Pipeline& p, EvalReport* report,
                                      uint64_t* scanned) const {
  std::vector<TypedRecord> input = records(pool, branch);
  if (scanned) *scanned = input.size();
  return eval(p, std::move(input), report);
}

std::vector<std::pair<CommitId, MessageMap>> Store::read_messages(
    const std::string& pool, const std::string& branch) const {
  impl_->check_open();
  BranchState& b = impl_->branch_ref(pool, branch);
  std::lock_guard lk(b.mu);
  std::vector<std::pair<CommitId, MessageMap>> out;
  for (const auto& c : b.commits) out.emplace_back(c->id, c->message);
  return out;
}

std::optional<std::string> Store::latest_cursor(const std::string& pool,
                                                const std::string& branch,
                                                const std::string& key) const {
  impl_->check_open();
  BranchState& b = impl_->branch_ref(pool, branch);
  std::lock_guard lk(b.mu);
  for (auto it = b.commits.rbegin(); it != b.commits.rend(); ++it) {
    auto m = (*it)->message.find(key);
    if (m != (*it)->message.end()) return m->second;
  }
  return std::nullopt;
}

std::optional<Commit> Store::Watcher::next(std::chrono::milliseconds timeout) {
  auto* commits = state_->commits;
  std::unique_lock lk(*state_->branch_mu);
  bool ready = state_->branch_cv->wait_for(lk, timeout, [&] {
    return state_->closed->load() || commits->size() > pos_;
  });
  if (state_->closed->load()) throw store_closed();
  if (!ready) return std::nullopt;
  return *(*commits)[pos_++];
}

Store::Watcher Store::watch(const std::string& pool, const std::string& branch,
                            CommitId from) const {
  impl_->check_open();
  BranchState& b = impl_->branch_ref(pool, branch);
  {
    std::lock_guard lk(b.mu);
    if (from > b.commits.size())
      throw store_error("watch from beyond next commit id");
  }
  Watcher w;
  w.state_ = std::make_shared<Watcher::State>();
  w.state_->commits = &b.commits;
  w.state_->branch_mu = &b.mu;
  w.state_->branch_cv = &b.cv;
  w.state_->closed = &impl_->closed;
  w.pos_ = from;
  return w;
}

}  // namespace ctxr
