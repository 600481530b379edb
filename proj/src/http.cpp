#include "ctxr/http.hpp"

#include <httplib.h>

#include <thread>

namespace ctxr {

namespace {

std::pair<std::string, int> split_addr(const std::string& addr) {
  size_t colon = addr.rfind(':');
  if (colon == std::string::npos) return {addr, 7077};
  return {addr.substr(0, colon), std::atoi(addr.c_str() + colon + 1)};
}

std::string one_line(std::initializer_list<std::pair<std::string, Value>> fields) {
  return serialize_text(TypedRecord::make(fields)) + "\n";
}

Role role_of(const httplib::Request& req, const std::string& fallback) {
  std::string role = req.get_header_value("X-Role");
  return Role{role.empty() ? fallback : role};
}

}  // namespace

struct HttpServer::Impl {
  Runtime& rt;
  httplib::Server svr;
  std::thread thread;

  explicit Impl(Runtime& runtime) : rt(runtime) { routes(); }

  void routes() {
    svr.Post("/apply", [this](const httplib::Request& req, httplib::Response& res) {
      auto results = rt.apply_text(req.body);
      std::string body;
      size_t applied = 0;
      for (const auto& r : results) {
        applied += r.applied;
        body += one_line({{"name", Value::string(r.name)},
                          {"applied", Value::boolean(r.applied)},
                          {"error", r.error.empty() ? Value::null()
                                                    : Value::string(r.error)}});
      }
      res.status = (!results.empty() && applied == 0) ? 400 : 200;
      res.set_content(body, "text/plain");
    });

    auto composition = [this](bool is_join) {
      return [this, is_join](const httplib::Request& req, httplib::Response& res) {
        std::string child, parent;
        try {
          auto recs = parse_lines(req.body);
          if (recs.size() != 1) throw parse_error("want one record", 0);
          const Value* c = recs[0].find("child");
          const Value* p = recs[0].find("parent");
          if (!c || !p || !c->is_string() || !p->is_string())
            throw parse_error("want {child:string,parent:string}", 0);
          child = c->as_string();
          parent = p->as_string();
        } catch (const parse_error& e) {
          res.status = 400;
          res.set_content(one_line({{"error", Value::string(e.what())}}),
                          "text/plain");
          return;
        }
        try {
          if (is_join) {
            rt.join(child, parent);
          } else {
            rt.leave(child, parent);
          }
          res.set_content(one_line({{"applied", Value::boolean(true)}}),
                          "text/plain");
        } catch (const duplicate_association& e) {
          res.status = 409;
          res.set_content(one_line({{"error", Value::string(e.what())}}),
                          "text/plain");
        } catch (const no_open_association& e) {
          res.status = 409;
          res.set_content(one_line({{"error", Value::string(e.what())}}),
                          "text/plain");
        } catch (const composition_error& e) {
          res.status = 404;
          res.set_content(one_line({{"error", Value::string(e.what())}}),
                          "text/plain");
        }
      };
    };
    svr.Post("/join", composition(true));
    svr.Post("/leave", composition(false));

    svr.Get("/query", [this](const httplib::Request& req, httplib::Response& res) {
      std::string target = req.get_param_value("target");
      std::string q = req.get_param_value("q");
      try {
        auto result = rt.query(target, q, role_of(req, rt.options().default_role));
        res.set_content(serialize_lines(result.records), "text/plain");
        res.set_header("X-Records-Scanned", std::to_string(result.scanned));
      } catch (const parse_error& e) {
        res.status = 400;
        res.set_content(one_line({{"error", Value::string(e.what())}}),
                        "text/plain");
      } catch (const access_denied& e) {
        res.status = 403;
        res.set_content(one_line({{"error", Value::string(e.what())}}),
                        "text/plain");
      } catch (const unknown_target& e) {
        res.status = 404;
        res.set_content(one_line({{"error", Value::string(e.what())}}),
                        "text/plain");
      }
    });

    svr.Get("/watch", [this](const httplib::Request& req, httplib::Response& res) {
      std::string target = req.get_param_value("target");
      size_t at = target.rfind('@');
      if (at == std::string::npos || at == 0 || at + 1 == target.size()) {
        res.status = 400;
        res.set_content(one_line({{"error", Value::string("bad target")}}),
                        "text/plain");
        return;
      }
      try {
        auto watcher = std::make_shared<Store::Watcher>(
            rt.watch(target.substr(0, at), target.substr(at + 1),
                     role_of(req, rt.options().default_role)));
        res.set_chunked_content_provider(
            "text/plain",
            [watcher](size_t, httplib::DataSink& sink) {
              try {
                auto commit = watcher->next(std::chrono::milliseconds(100));
                if (commit) {
                  std::string chunk = serialize_lines(commit->records);
                  if (!chunk.empty() &&
                      !sink.write(chunk.data(), chunk.size()))
                    return false;
                }
                return sink.is_writable();
              } catch (const store_closed&) {
                sink.done();
                return false;
              }
            });
      } catch (const access_denied& e) {
        res.status = 403;
        res.set_content(one_line({{"error", Value::string(e.what())}}),
                        "text/plain");
      } catch (const unknown_target& e) {
        res.status = 404;
        res.set_content(one_line({{"error", Value::string(e.what())}}),
                        "text/plain");
      }
    });

    svr.Post("/load", [this](const httplib::Request& req, httplib::Response& res) {
      std::string ctx = req.get_param_value("ctx");
      try {
        auto records = parse_lines(req.body);
        CommitId id = rt.load(ctx, std::move(records));
        res.set_content(one_line({{"commit", Value::integer(int64_t(id))}}),
                        "text/plain");
      } catch (const parse_error& e) {
        res.status = 400;
        res.set_content(one_line({{"error", Value::string(e.what())}}),
                        "text/plain");
      } catch (const unknown_target& e) {
        res.status = 404;
        res.set_content(one_line({{"error", Value::string(e.what())}}),
                        "text/plain");
      } catch (const store_error& e) {
        res.status = 400;
        res.set_content(one_line({{"error", Value::string(e.what())}}),
                        "text/plain");
      }
    });

    svr.Get("/contexts", [this](const httplib::Request&, httplib::Response& res) {
      std::string body;
      for (const auto& meta : rt.list_contexts()) {
        body += one_line({{"name", Value::string(meta.name)},
                          {"kind", Value::string(meta.kind.to_string())},
                          {"role", Value::string(meta.role.id)}});
      }
      res.set_content(body, "text/plain");
    });
  }
};

HttpServer::HttpServer(Runtime& rt) : impl_(std::make_unique<Impl>(rt)) {}

HttpServer::~HttpServer() { stop(); }

bool HttpServer::start(const std::string& addr) {
  auto [host, port] = split_addr(addr);
  if (port == 0) {
    port_ = impl_->svr.bind_to_any_port(host);
    if (port_ < 0) return false;
  } else {
    if (!impl_->svr.bind_to_port(host, port)) return false;
    port_ = port;
  }
  impl_->thread = std::thread([this] { impl_->svr.listen_after_bind(); });
  impl_->svr.wait_until_ready();
  return true;
}

void HttpServer::stop() {
  if (!impl_) return;
  impl_->svr.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace ctxr
