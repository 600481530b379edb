// ctxr-harness: scenario, benchmark and fault-injection driver.
#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "ctxr/harness.hpp"

namespace fs = std::filesystem;

namespace {

void print_report(const ctxr::harness::Report& rep) {
  for (const auto& line : rep.notes) std::cout << "  " << line << "\n";
  std::cout << (rep.passed ? "[PASS] " : "[FAIL] ") << rep.name << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ctxrouter evaluation harness"};
  app.require_subcommand(1);

  uint64_t seed = 7;
  int rooms = 4;
  std::string data;
  app.add_option("--seed", seed, "random seed");
  app.add_option("--rooms", rooms, "rooms in the campus topology");
  app.add_option("--data", data, "work directory (default: temp)");

  auto* run = app.add_subcommand("run", "run a scenario");
  std::string scenario;
  run->add_option("scenario", scenario, "one of: s1_query s2_compose "
                  "s3_opportunistic s4_policy s6_automation s7_heterogeneous "
                  "bench crash durability or 'all'")
      ->required();
  int records = 10000, kills = 25, records_per_device = 1000;
  run->add_option("--records", records, "crash test record count");
  run->add_option("--kills", kills, "crash/durability kill points");
  run->add_option("--records-per-device", records_per_device,
                  "benchmark records per device");

  CLI11_PARSE(app, argc, argv);

  fs::path work = data.empty()
                      ? fs::temp_directory_path() /
                            ("ctxr-harness-" + std::to_string(::getpid()))
                      : fs::path(data);

  bool all_passed = true;
  auto consume = [&](const ctxr::harness::Report& rep) {
    print_report(rep);
    all_passed = all_passed && rep.passed;
  };

  if (scenario == "bench") {
    auto bench = ctxr::harness::bench_query_orientation(
        rooms, records_per_device, seed, work / "bench");
    std::cout << "{context_scanned:" << bench.context_scanned
              << ",device_scanned:" << bench.device_scanned
              << ",context_ms:" << bench.context_ms
              << ",device_ms:" << bench.device_ms << "}\n";
    consume(bench.report);
  } else if (scenario == "crash") {
    auto crash =
        ctxr::harness::crash_test(records, kills, seed, work / "crash");
    consume(crash.report);
  } else if (scenario == "durability") {
    consume(ctxr::harness::durability_test(kills, seed, work / "durability"));
  } else if (scenario == "all") {
    for (const auto& name : ctxr::harness::scenario_names())
      consume(ctxr::harness::run_scenario(name, seed, rooms, work / name));
  } else {
    consume(ctxr::harness::run_scenario(scenario, seed, rooms, work / scenario));
  }

  if (data.empty()) fs::remove_all(work);
  return all_passed ? 0 : 1;
}
