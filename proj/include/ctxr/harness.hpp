#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ctxr/runtime.hpp"

namespace ctxr::harness {

/// Assertion collector: scenarios accumulate one line per check.
struct Report {
  std::string name;
  bool passed = true;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& what) {
    passed = passed && ok;
    notes.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
  }
  void note(const std::string& what) { notes.push_back("     " + what); }
};

/// Desk-scale scenario analogs. Known names: s1_query, s2_compose,
/// s3_opportunistic, s4_policy, s6_automation, s7_heterogeneous.
Report run_scenario(const std::string& name, uint64_t seed, int rooms,
                    const std::filesystem::path& work_dir);

std::vector<std::string> scenario_names();

/// Query-orientation benchmark: the context-path answers must equal the
/// brute-force device-path oracle, and the context path must scan fewer
/// records.
struct BenchReport {
  Report report;
  uint64_t context_scanned = 0, device_scanned = 0;
  double context_ms = 0, device_ms = 0;
};
BenchReport bench_query_orientation(int rooms, int records_per_device,
                                    uint64_t seed,
                                    const std::filesystem::path& work_dir);

/// Drives a device -> room -> building chain while killing and restarting
/// the whole data plane at random store persistence points (including
/// mid-commit, pre-journal). The final building store must hold each derived
/// record exactly once, in ts order. With disable_cursor_filter the run is a
/// negative control and must fail with duplicates.
struct CrashReport {
  Report report;
  int kills_fired = 0;
  uint64_t final_count = 0;
};
CrashReport crash_test(int records, int kill_points, uint64_t seed,
                       const std::filesystem::path& work_dir,
                       bool disable_cursor_filter = false);

/// Random kill points during direct store loads; every reopen must see a
/// clean prefix of the committed history.
Report durability_test(int kill_points, uint64_t seed,
                       const std::filesystem::path& work_dir);

}  // namespace ctxr::harness
