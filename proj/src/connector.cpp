#include "ctxr/connector.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

namespace ctxr {

namespace {

ConnectorReport run_replay(Runtime& rt, const ConnectorSpec& spec) {
  ConnectorReport report;
  std::ifstream in(spec.file);
  if (!in) {
    report.error = "cannot open replay file " + spec.file;
    return report;
  }
  std::stringstream ss;
  ss << in.rdbuf();
  std::vector<TypedRecord> records;
  try {
    records = parse_lines(ss.str());
  } catch (const parse_error& e) {
    report.error = std::string("replay parse error: ") + e.what();
    return report;
  }
  auto start = std::chrono::steady_clock::now();
  for (auto& rec : records) {
    double at = 0;
    if (const Value* t = rec.find("_t")) {
      if (t->is_numeric()) at = t->as_number();
      rec = rec.without_field("_t");
    }
    auto due = start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                           std::chrono::duration<double>(at / spec.speed));
    std::this_thread::sleep_until(due);
    try {
      rt.load(spec.target_ctx, {rec});
      report.loaded++;
    } catch (const std::exception& e) {
      report.error = e.what();
      return report;
    }
  }
  return report;
}

ConnectorReport run_generator(Runtime& rt, const ConnectorSpec& spec) {
  ConnectorReport report;
  if (!rt.context(spec.target_ctx)) {
    report.error = "unknown context '" + spec.target_ctx + "'";
    return report;
  }
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> normal(spec.mean, spec.jitter);

  uint64_t count = uint64_t(std::floor(spec.rate * spec.duration));
  int64_t step_ns = int64_t(1e9 / spec.rate);
  auto start = std::chrono::steady_clock::now();

  std::vector<TypedRecord> pending;
  auto flush = [&] {
    if (pending.empty()) return;
    rt.load(spec.target_ctx, std::move(pending));
    pending.clear();
  };

  for (uint64_t i = 0; i < count; i++) {
    if (!spec.virtual_time) {
      std::this_thread::sleep_until(start + std::chrono::nanoseconds(step_ns) * i);
    }
    std::vector<std::pair<std::string, Value>> fields;
    switch (spec.payload) {
      case ConnectorSpec::Payload::Motion:
        fields.emplace_back("detected", Value::boolean(uni(rng) < spec.p_true));
        break;
      case ConnectorSpec::Payload::Power: {
        double watt = uni(rng) < spec.p_idle ? 0.0 : std::max(0.0, normal(rng));
        fields.emplace_back("watt", Value::floating(watt));
        break;
      }
      case ConnectorSpec::Payload::Noise:
        fields.emplace_back("spl", Value::floating(std::max(0.0, normal(rng))));
        break;
    }
    if (spec.virtual_time) {
      fields.emplace_back(
          "event_ts",
          Value::time(Timestamp{spec.virtual_start.ns + int64_t(i) * step_ns}));
    }
    pending.push_back(TypedRecord::make(std::move(fields)));
    if (pending.size() >= spec.batch) {
      try {
        flush();
        report.loaded += spec.batch;
      } catch (const std::exception& e) {
        report.error = e.what();
        return report;
      }
    }
  }
  try {
    uint64_t rest = pending.size();
    flush();
    report.loaded += rest;
  } catch (const std::exception& e) {
    report.error = e.what();
  }
  return report;
}

}  // namespace

ConnectorReport run_connector(Runtime& rt, const ConnectorSpec& spec) {
  if (!rt.context(spec.target_ctx)) {
    ConnectorReport report;
    report.error = "unknown context '" + spec.target_ctx + "'";
    return report;
  }
  return spec.kind == ConnectorSpec::Kind::Replay ? run_replay(rt, spec)
                                                  : run_generator(rt, spec);
}

}  // namespace ctxr
