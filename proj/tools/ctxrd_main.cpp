// ctxrd: the ctxrouter daemon. Hosts all contexts in one process and serves
// the REST surface until interrupted.
#include <CLI11.hpp>
#include <yaml-cpp/yaml.h>

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include "ctxr/http.hpp"
#include "ctxr/runtime.hpp"

namespace {

std::atomic<bool> g_stop{false};

void handle_signal(int) { g_stop.store(true); }

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? v : fallback;
}

// ACL file: one `role: ["name@egress", ...]` entry per role.
ctxr::AclTable load_acl(const std::string& path) {
  ctxr::AclTable acl;
  YAML::Node doc = YAML::LoadFile(path);
  for (const auto& entry : doc) {
    std::string role = entry.first.as<std::string>();
    for (const auto& pat : entry.second) {
      auto parsed = ctxr::TargetPattern::parse(pat.as<std::string>());
      if (!parsed)
        throw std::runtime_error("bad ACL pattern '" + pat.as<std::string>() +
                                 "' for role " + role);
      acl.add(role, *parsed);
    }
  }
  return acl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ctxrouter daemon"};
  std::string data_dir = env_or("CTXR_DATA_DIR", "./ctxr-data");
  std::string listen = env_or("CTXR_LISTEN", "127.0.0.1:7077");
  std::string acl_file;
  std::vector<std::string> apply_files;
  app.add_option("--data", data_dir, "persistence root (CTXR_DATA_DIR)");
  app.add_option("--listen", listen, "bind address (CTXR_LISTEN)");
  app.add_option("--acl", acl_file, "role ACL file (YAML)");
  app.add_option("--apply", apply_files, "context documents applied at boot");
  CLI11_PARSE(app, argc, argv);

  ctxr::Runtime::Options opts;
  opts.data_dir = data_dir;
  if (!acl_file.empty()) {
    try {
      opts.acl = load_acl(acl_file);
    } catch (const std::exception& e) {
      std::cerr << "ctxrd: " << e.what() << "\n";
      return 1;
    }
  }

  ctxr::Runtime runtime(opts);
  for (const auto& f : apply_files) {
    std::ifstream in(f);
    if (!in) {
      std::cerr << "ctxrd: cannot open " << f << "\n";
      return 1;
    }
    std::stringstream ss;
    ss << in.rdbuf();
    for (const auto& r : runtime.apply_text(ss.str())) {
      if (!r.applied)
        std::cerr << "ctxrd: apply " << r.name << ": " << r.error << "\n";
      else
        std::cerr << "ctxrd: applied " << r.name << "\n";
    }
  }

  ctxr::HttpServer server(runtime);
  if (!server.start(listen)) {
    std::cerr << "ctxrd: cannot bind " << listen << "\n";
    return 1;
  }
  std::cerr << "ctxrd: serving on " << listen << ", data in " << data_dir
            << "\n";

  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
  while (!g_stop.load()) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  std::cerr << "ctxrd: shutting down\n";
  server.stop();
  return 0;
}
