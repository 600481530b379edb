#pragma once

#include <memory>
#include <string>

#include "ctxr/runtime.hpp"

namespace ctxr {

/// REST surface over a Runtime. Request and response bodies are record-lines.
///
///   POST /apply                 body: YAML context documents
///   POST /join                  body: {child:"..",parent:".."}
///   POST /leave                 body: {child:"..",parent:".."}
///   GET  /query?target=&q=      role via X-Role header
///   GET  /watch?target=         streamed record-lines
///   POST /load?ctx=             body: record-lines
///   GET  /contexts
class HttpServer {
public:
  explicit HttpServer(Runtime& rt);
  ~HttpServer();

  /// Binds host:port (port 0 picks a free port) and serves on a background
  /// thread. False when the bind fails.
  bool start(const std::string& addr);
  void stop();
  int port() const { return port_; }

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

}  // namespace ctxr
