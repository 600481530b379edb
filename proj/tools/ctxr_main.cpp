// ctxr: command-line front end for the ctxrouter runtime. Thin mapping onto
// the HTTP surface; query output is the HTTP body, byte for byte.
#include <CLI11.hpp>
#include <httplib.h>

#include <csignal>
#include <cstdio>
#include <iostream>
#include <sstream>

#include "ctxr/flow.hpp"
#include "ctxr/record.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitDenied = 2;

struct Remote {
  std::string host;
  int port;

  explicit Remote(const std::string& addr) {
    size_t colon = addr.rfind(':');
    host = colon == std::string::npos ? addr : addr.substr(0, colon);
    port = colon == std::string::npos ? 7077 : std::atoi(addr.c_str() + colon + 1);
    if (host.empty() || host == "0.0.0.0") host = "127.0.0.1";
  }

  httplib::Client client() const {
    httplib::Client c(host, port);
    c.set_read_timeout(60, 0);
    c.set_connection_timeout(5, 0);
    return c;
  }
};

int status_to_exit(int status) {
  if (status == 200) return kExitOk;
  if (status == 403) return kExitDenied;
  return kExitError;
}

int report(const httplib::Result& res, bool print_body = true) {
  if (!res) {
    std::cerr << "ctxr: connection failed: " << httplib::to_string(res.error())
              << "\n";
    return kExitError;
  }
  if (print_body && !res->body.empty()) {
    (res->status == 200 ? std::cout : std::cerr) << res->body;
  }
  return status_to_exit(res->status);
}

std::string default_addr() {
  const char* env = std::getenv("CTXR_LISTEN");
  return env && *env ? env : "127.0.0.1:7077";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ctxrouter command line"};
  app.require_subcommand(1);
  std::string addr = default_addr();
  std::string role;
  app.add_option("--addr", addr, "runtime address (default from CTXR_LISTEN)");
  app.add_option("--role", role, "role presented via the X-Role header");

  auto headers = [&]() {
    httplib::Headers h;
    if (!role.empty()) h.emplace("X-Role", role);
    return h;
  };

  // apply -f FILE...
  auto* apply = app.add_subcommand("apply", "apply context documents");
  std::vector<std::string> files;
  apply->add_option("-f,--file", files, "YAML document file")->required();

  // join [-l] CHILD PARENT ; leave CHILD PARENT
  auto* join = app.add_subcommand("join", "declare CHILD available to PARENT");
  bool leave_flag = false;
  std::string child, parent;
  join->add_flag("-l", leave_flag, "leave instead of join");
  join->add_option("child", child)->required();
  join->add_option("parent", parent)->required();
  auto* leave = app.add_subcommand("leave", "remove a context association");
  leave->add_option("child", child)->required();
  leave->add_option("parent", parent)->required();

  // query TARGET PIPELINE
  auto* query = app.add_subcommand("query", "query an egress (or kind fan-out)");
  std::string target, pipeline;
  query->add_option("target", target, "NAME@EGRESS or kind:PATTERN@EGRESS")
      ->required();
  query->add_option("pipeline", pipeline, "dataflow pipeline");

  // load CTX  (records on stdin)
  auto* load = app.add_subcommand("load", "load record-lines from stdin");
  std::string ctx;
  load->add_option("ctx", ctx)->required();

  // watch TARGET
  auto* watch = app.add_subcommand("watch", "stream an egress");
  watch->add_option("target", target, "NAME@EGRESS")->required();

  auto* ls = app.add_subcommand("ls", "list contexts");

  // qcx TARGET... PIPELINE
  auto* qcx_cmd = app.add_subcommand("qcx", "query complexity of a query");
  std::vector<std::string> qcx_args;
  qcx_cmd->add_option("args", qcx_args, "TARGET... PIPELINE")->required();

  CLI11_PARSE(app, argc, argv);
  Remote remote(addr);

  if (*apply) {
    std::string body;
    for (const auto& f : files) {
      std::ifstream in(f);
      if (!in) {
        std::cerr << "ctxr: cannot open " << f << "\n";
        return kExitError;
      }
      std::stringstream ss;
      ss << in.rdbuf();
      body += ss.str();
      body += "\n---\n";
    }
    auto c = remote.client();
    return report(c.Post("/apply", headers(), body, "application/yaml"));
  }
  if (*join || *leave) {
    std::string path = (*leave || leave_flag) ? "/leave" : "/join";
    std::string body = ctxr::serialize_text(ctxr::TypedRecord::make(
                           {{"child", ctxr::Value::string(child)},
                            {"parent", ctxr::Value::string(parent)}})) +
                       "\n";
    auto c = remote.client();
    return report(c.Post(path, headers(), body, "text/plain"));
  }
  if (*query) {
    httplib::Params params{{"target", target}, {"q", pipeline}};
    auto c = remote.client();
    return report(c.Get("/query", params, headers()));
  }
  if (*load) {
    std::stringstream ss;
    ss << std::cin.rdbuf();
    auto c = remote.client();
    return report(c.Post("/load?ctx=" + ctx, headers(), ss.str(), "text/plain"));
  }
  if (*watch) {
    auto c = remote.client();
    c.set_read_timeout(86400, 0);  // stream until interrupted
    auto res = c.Get(
        "/watch?target=" + target, headers(),
        [](const httplib::Response& r) { return r.status == 200; },
        [](const char* data, size_t len) {
          std::fwrite(data, 1, len, stdout);
          std::fflush(stdout);
          return true;
        });
    if (!res && res.error() == httplib::Error::Read) return kExitOk;
    return report(res, false);
  }
  if (*ls) {
    auto c = remote.client();
    return report(c.Get("/contexts", headers()));
  }
  if (*qcx_cmd) {
    // Computed locally: targets are the leading args, the pipeline the last.
    if (qcx_args.empty()) {
      std::cerr << "ctxr: qcx needs TARGET... PIPELINE\n";
      return kExitError;
    }
    std::string text = qcx_args.back();
    std::vector<std::string> targets(qcx_args.begin(), qcx_args.end() - 1);
    if (targets.empty()) {
      // A single argument that looks like a target means an empty pipeline.
      if (text.find('@') != std::string::npos) {
        targets.push_back(text);
        text.clear();
      }
    }
    try {
      std::cout << ctxr::qcx(targets, ctxr::Pipeline::parse(text)) << "\n";
      return kExitOk;
    } catch (const ctxr::parse_error& e) {
      std::cerr << "ctxr: bad pipeline: " << e.what() << "\n";
      return kExitError;
    }
  }
  return kExitError;
}
