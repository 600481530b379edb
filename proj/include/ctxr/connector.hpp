#pragma once

#include <string>

#include "ctxr/runtime.hpp"

namespace ctxr {

/// Simulated source connector standing in for vendor device proxies: either
/// replays a record-lines file on a relative-time schedule or generates a
/// parameterized synthetic stream. Emits records via the context load path
/// only, so timestamps follow the usual stamping rules.
struct ConnectorSpec {
  enum class Kind { Replay, Generator };
  Kind kind = Kind::Generator;
  std::string target_ctx;

  // Replay: records may carry `_t` (seconds from start, int or float). The
  // field schedules the load and is stripped before loading.
  std::string file;
  double speed = 1.0;

  // Generator.
  enum class Payload { Motion, Power, Noise };
  Payload payload = Payload::Motion;
  double rate = 10.0;      // records per second
  double duration = 1.0;   // seconds
  uint64_t seed = 0;
  /// Virtual time: no sleeping; event_ts walks a synthetic clock at 1/rate
  /// steps from virtual_start.
  bool virtual_time = true;
  Timestamp virtual_start{1700000000000000000};  // arbitrary fixed epoch
  size_t batch = 1;  // records per load call

  // Payload parameters.
  double p_true = 0.5;              // Motion: P(detected=true)
  double mean = 60.0, jitter = 8.0;  // Power watt / Noise spl
  double p_idle = 0.0;              // Power: probability of an exact-0 reading
};

struct ConnectorReport {
  uint64_t loaded = 0;
  std::string error;
  bool ok() const { return error.empty(); }
};

/// Runs the connector to completion (replay end or generator duration).
ConnectorReport run_connector(Runtime& rt, const ConnectorSpec& spec);

}  // namespace ctxr
