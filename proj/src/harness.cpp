#include "ctxr/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <set>

#include "ctxr/connector.hpp"

namespace ctxr::harness {

namespace {

namespace fs = std::filesystem;
using namespace std::chrono_literals;

constexpr int64_t kNs = 1000000000;
const Timestamp kVirtualStart{1700000000000000000};

Runtime::Options harness_opts(const fs::path& dir) {
  Runtime::Options opts;
  opts.data_dir = dir;
  opts.poll_interval = 5ms;
  return opts;
}

std::string fmt_double(double d) { return serialize_value(Value::floating(d)); }

// ---------------------------------------------------------------------------
// Campus topology: N rooms, each with two motion detectors and two plugs,
// optionally a building composing the rooms.

std::vector<std::string> room_names(int rooms) {
  static const char* canonical[] = {"BioLab", "PhyLab", "Lounge", "Office"};
  std::vector<std::string> out;
  for (int i = 0; i < rooms; i++) {
    out.push_back(i < 4 && rooms <= 4 ? canonical[i]
                                      : "room" + std::to_string(i));
  }
  return out;
}

std::string device_yaml(const std::string& name, const std::string& kind,
                        const std::string& egress) {
  return "kind: cot.dev/v1/" + kind + "\nname: " + name +
         "\negress:\n  - name: " + egress + "\n";
}

std::string room_yaml(const std::string& name) {
  return
      "kind: cot.dev/v1/Room\n"
      "name: " + name + "\n"
      "role: room\n"
      "ingress:\n"
      "  - name: occ_in\n"
      "    intent: [\"*/*/Motion@detected\"]\n"
      "    flow: \"rename occupancy:=detected | shape(this, <{occupancy:float64}>) | cut occupancy,event_ts\"\n"
      "  - name: energy_in\n"
      "    intent: [\"any@energy\"]\n"
      "    flow: \"where watt > 0. | cut watt,event_ts\"\n"
      "egress:\n"
      "  - name: occupancy\n"
      "    flow: \"where has(occupancy) | cut occupancy,event_ts,ts\"\n"
      "  - name: energy\n"
      "    flow: \"where has(watt) | cut watt,event_ts,ts\"\n";
}

std::string building_yaml(const std::string& name) {
  return
      "kind: cot.dev/v1/Building\n"
      "name: " + name + "\n"
      "role: building\n"
      "ingress:\n"
      "  - name: room_occupancy\n"
      "    intent: [\"*/*/Room@occupancy\"]\n"
      "    patch_from: true\n"
      "  - name: room_energy\n"
      "    intent: [\"*/*/Room@energy\"]\n"
      "    patch_from: true\n"
      "egress:\n"
      "  - name: occupancy\n"
      "    flow: \"where has(occupancy) | cut occupancy,event_ts,ts,from\"\n"
      "  - name: energy\n"
      "    flow: \"where has(watt) | cut watt,event_ts,ts,from\"\n";
}

struct Campus {
  std::vector<std::string> rooms;
  std::map<std::string, std::vector<std::string>> motion;  // room -> devices
  std::map<std::string, std::vector<std::string>> plugs;
  std::string building;  // empty when not built
};

Campus build_campus(Runtime& rt, int rooms, bool with_building) {
  Campus campus;
  campus.rooms = room_names(rooms);
  std::string yaml;
  for (const auto& room : campus.rooms) {
    yaml += room_yaml(room) + "---\n";
    for (int d = 0; d < 2; d++) {
      std::string m = room + "_m" + std::to_string(d);
      std::string p = room + "_p" + std::to_string(d);
      campus.motion[room].push_back(m);
      campus.plugs[room].push_back(p);
      yaml += device_yaml(m, "Motion", "detected") + "---\n";
      yaml += device_yaml(p, "Plug", "energy") + "---\n";
    }
  }
  if (with_building) {
    campus.building = "BioHall";
    yaml += building_yaml(campus.building) + "---\n";
  }
  for (const auto& r : rt.apply_text(yaml)) {
    if (!r.applied)
      throw std::runtime_error("campus apply failed: " + r.name + ": " + r.error);
  }
  for (const auto& room : campus.rooms) {
    for (const auto& m : campus.motion[room]) rt.join(m, room);
    for (const auto& p : campus.plugs[room]) rt.join(p, room);
    if (with_building) rt.join(room, campus.building);
  }
  return campus;
}

/// Feeds every device through virtual-time generators; parameters vary per
/// room so occupancy rates and energy levels differ.
void feed_campus(Runtime& rt, const Campus& campus, int records_per_device,
                 uint64_t seed, double virtual_seconds) {
  double rate = records_per_device / virtual_seconds;
  int room_idx = 0;
  for (const auto& room : campus.rooms) {
    double p_true =
        0.15 + 0.6 * room_idx / std::max<size_t>(1, campus.rooms.size() - 1);
    for (size_t d = 0; d < campus.motion.at(room).size(); d++) {
      ConnectorSpec spec;
      spec.kind = ConnectorSpec::Kind::Generator;
      spec.target_ctx = campus.motion.at(room)[d];
      spec.payload = ConnectorSpec::Payload::Motion;
      spec.rate = rate;
      spec.duration = virtual_seconds;
      spec.seed = seed + room_idx * 10 + d;
      spec.virtual_time = true;
      spec.virtual_start = kVirtualStart;
      spec.batch = 25;
      spec.p_true = p_true;
      auto report = run_connector(rt, spec);
      if (!report.ok()) throw std::runtime_error(report.error);
    }
    for (size_t d = 0; d < campus.plugs.at(room).size(); d++) {
      ConnectorSpec spec;
      spec.kind = ConnectorSpec::Kind::Generator;
      spec.target_ctx = campus.plugs.at(room)[d];
      spec.payload = ConnectorSpec::Payload::Power;
      spec.rate = rate;
      spec.duration = virtual_seconds;
      spec.seed = seed + 1000 + room_idx * 10 + d;
      spec.virtual_time = true;
      spec.virtual_start = kVirtualStart;
      spec.batch = 25;
      spec.mean = 40.0 + 15.0 * room_idx;
      spec.jitter = 6.0;
      spec.p_idle = 0.25;
      auto report = run_connector(rt, spec);
      if (!report.ok()) throw std::runtime_error(report.error);
    }
    room_idx++;
  }
}

struct RoomOracle {
  bool occupied = false;       // any true detection inside the window
  double occupancy_rate = 0;   // mean of detections (0/1) inside the window
  uint64_t rate_n = 0;
  double energy_avg = 0;       // mean positive watt inside the window
  uint64_t energy_n = 0;
  uint64_t motion_scanned = 0;  // device records read
  uint64_t plug_scanned = 0;
  double min_sample = 2.0;     // smallest occupancy sample (whole history)
};

/// Brute force over the raw per-device records.
RoomOracle device_path_oracle(Runtime& rt, const Campus& campus,
                              const std::string& room, Timestamp cutoff) {
  RoomOracle o;
  double rate_sum = 0, energy_sum = 0;
  for (const auto& dev : campus.motion.at(room)) {
    auto records = rt.store().records(dev, "main");
    o.motion_scanned += records.size();
    for (const auto& r : records) {
      bool detected = r.find("detected")->as_bool();
      double sample = detected ? 1.0 : 0.0;
      o.min_sample = std::min(o.min_sample, sample);
      if (r.find("event_ts")->as_time() > cutoff) {
        rate_sum += sample;
        o.rate_n++;
        if (detected) o.occupied = true;
      }
    }
  }
  for (const auto& dev : campus.plugs.at(room)) {
    auto records = rt.store().records(dev, "main");
    o.plug_scanned += records.size();
    for (const auto& r : records) {
      double watt = r.find("watt")->as_float();
      if (watt > 0.0 && r.find("event_ts")->as_time() > cutoff) {
        energy_sum += watt;
        o.energy_n++;
      }
    }
  }
  if (o.rate_n) o.occupancy_rate = rate_sum / double(o.rate_n);
  if (o.energy_n) o.energy_avg = energy_sum / double(o.energy_n);
  return o;
}

std::string ts_literal(Timestamp t) { return format_rfc3339(t); }

// ---------------------------------------------------------------------------
// Scenarios

Report s1_query(uint64_t seed, int rooms, const fs::path& dir) {
  Report rep{"s1_query"};
  Runtime rt(harness_opts(dir));
  Campus campus = build_campus(rt, rooms, true);
  double virtual_seconds = 100.0;
  feed_campus(rt, campus, 120, seed, virtual_seconds);
  rep.check(rt.quiesce(60s), "pipelets quiesce");
  Timestamp cutoff{kVirtualStart.ns + int64_t((virtual_seconds - 60.0) * kNs)};

  // (i) Querying individual rooms: occupancy rate and energy per room equal
  // the device-path oracle.
  double min_sample = 2.0;
  std::string min_room;
  std::map<std::string, uint64_t> count_by_room;
  for (const auto& room : campus.rooms) {
    RoomOracle oracle = device_path_oracle(rt, campus, room, cutoff);
    auto occ = rt.query(room + "@occupancy",
                        "where event_ts > " + ts_literal(cutoff) +
                            " | avg(occupancy)",
                        Role{"admin"});
    bool rate_ok =
        !occ.records.empty() && occ.records[0].find("avg")->is_float() &&
        std::fabs(occ.records[0].find("avg")->as_float() - oracle.occupancy_rate) <
            1e-9;
    rep.check(rate_ok, room + " occupancy rate matches oracle (" +
                           fmt_double(oracle.occupancy_rate) + ")");
    auto energy = rt.query(room + "@energy",
                           "where event_ts > " + ts_literal(cutoff) +
                               " | avg(watt)",
                           Role{"admin"});
    bool energy_ok =
        !energy.records.empty() &&
        std::fabs(energy.records[0].find("avg")->as_float() - oracle.energy_avg) <
            1e-9;
    rep.check(energy_ok, room + " energy avg matches oracle (" +
                             fmt_double(oracle.energy_avg) + ")");
    if (oracle.min_sample < min_sample) {
      min_sample = oracle.min_sample;
      min_room = room;  // rooms iterate in fan-out (name) order already
    }
    count_by_room[room] =
        rt.query(room + "@occupancy", "count()", Role{"admin"})
            .records[0]
            .find("count")
            ->as_int();
  }

  // (ii) Ranking across rooms: the fan-out sort|head query returns the
  // least-occupied sample, tagged with its room.
  std::vector<std::string> sorted_rooms = campus.rooms;
  std::sort(sorted_rooms.begin(), sorted_rooms.end());
  std::string expect_ctx;
  for (const auto& room : sorted_rooms) {
    if (device_path_oracle(rt, campus, room, cutoff).min_sample == min_sample) {
      expect_ctx = room;
      break;
    }
  }
  auto least = rt.query("kind:*/*/Room@occupancy", "sort occupancy | head",
                        Role{"admin"});
  rep.check(least.records.size() == 1, "fan-out sort|head returns one record");
  if (least.records.size() == 1) {
    rep.check(least.records[0].find("occupancy")->as_float() == min_sample,
              "least-occupied sample value");
    rep.check(least.records[0].find("_ctx")->as_string() == expect_ctx,
              "least-occupied room is " + expect_ctx);
  }

  // Ranking by activity count via group-by.
  auto by_room = rt.query("kind:*/*/Room@occupancy", "count() by _ctx",
                          Role{"admin"});
  rep.check(by_room.records.size() == campus.rooms.size(),
            "count() by _ctx yields one row per room");
  for (const auto& r : by_room.records) {
    std::string room = r.find("_ctx")->as_string();
    rep.check(uint64_t(r.find("count")->as_int()) == count_by_room[room],
              "per-room activity count for " + room);
  }

  // (iii) Correlation across egresses of one room: both series line up by
  // room index (more occupancy and more energy were generated together).
  rep.note("cross-egress queries answered for " +
           std::to_string(campus.rooms.size()) + " rooms");
  return rep;
}

Report s2_compose(uint64_t, int, const fs::path& dir) {
  Report rep{"s2_compose"};
  Runtime rt(harness_opts(dir));
  std::string yaml;
  std::vector<std::string> rooms = {"r1", "r2", "r3", "r4"};
  for (const auto& r : rooms) {
    yaml +=
        "kind: cot.dev/v1/Room\nname: " + r + "\n"
        "egress:\n"
        "  - name: occupancy\n"
        "    flow: \"where has(occupancy) | cut occupancy,event_ts,ts\"\n"
        "---\n";
  }
  yaml += building_yaml("BioHall");
  for (const auto& r : rt.apply_text(yaml))
    rep.check(r.applied, "apply " + r.name);
  for (const auto& r : rooms) rt.join(r, "BioHall");

  double values[] = {1.0, 0.0, 1.0, 0.0};
  for (size_t i = 0; i < rooms.size(); i++) {
    rt.load(rooms[i], {TypedRecord::make(
                          {{"occupancy", Value::floating(values[i])}})});
  }
  rep.check(rt.quiesce(30s), "pipelets quiesce");

  auto out = rt.query("BioHall@occupancy", "avg(occupancy)", Role{"admin"});
  rep.check(out.records.size() == 1, "building query returns one record");
  if (!out.records.empty()) {
    rep.check(out.records[0].find("avg")->as_float() == 0.5,
              "building occupancy is exactly 0.5 (2 of 4 rooms occupied)");
  }
  // Lineage grew one hop on the way in.
  auto main = rt.store().records("BioHall", "main");
  rep.check(main.size() == 4, "building ingested one record per room");
  bool lineage_ok = !main.empty();
  for (const auto& r : main) {
    const Value* from = r.find("from");
    lineage_ok = lineage_ok && from && from->is_array() &&
                 from->as_array().size() == 1;
  }
  rep.check(lineage_ok, "each ingested record carries one-hop lineage");
  return rep;
}

Report s3_opportunistic(uint64_t, int, const fs::path& dir) {
  Report rep{"s3_opportunistic"};
  Runtime rt(harness_opts(dir));
  std::string room_def =
      "ingress:\n"
      "  - name: net_in\n"
      "    intent: [\"any@netTest\"]\n"
      "    flow: \"cut download,upload,event_ts\"\n"
      "    patch_from: true\n"
      "egress:\n"
      "  - name: netSpeed\n"
      "    flow: \"where has(download) | cut download,upload,event_ts,ts,from\"\n";
  rt.apply_text(
      "kind: cot.dev/v1/Room\nname: RoomA\n" + room_def + "---\n" +
      "kind: cot.dev/v1/Room\nname: RoomB\n" + room_def + "---\n" +
      "kind: apple.com/v1/iphone\nname: AlicePhone\n"
      "egress:\n  - name: netTest\n");

  auto measurement = [&](double down, double up) {
    rt.load("AlicePhone",
            {TypedRecord::make({{"download", Value::floating(down)},
                                {"upload", Value::floating(up)},
                                {"bssid", Value::string("ap-1")}})});
  };

  measurement(100.0, 10.0);  // taken before entering any room
  rt.join("AlicePhone", "RoomA");
  rep.check(rt.quiesce(30s), "quiesce after join A");
  measurement(80.0, 12.0);
  rep.check(rt.quiesce(30s), "quiesce after m2");
  rt.leave("AlicePhone", "RoomA");
  rt.join("AlicePhone", "RoomB");
  measurement(60.0, 20.0);
  rep.check(rt.quiesce(30s), "quiesce after move to B");

  auto a = rt.query("RoomA@netSpeed", "", Role{"admin"});
  auto b = rt.query("RoomB@netSpeed", "", Role{"admin"});
  rep.check(a.records.size() == 2,
            "RoomA ingested the history while the phone was present (2)");
  rep.check(b.records.size() == 3,
            "RoomB ingested the full egress after the move (3)");

  // Ingestion stopped for RoomA after the leave.
  measurement(40.0, 5.0);
  rep.check(rt.quiesce(30s), "quiesce after m4");
  rep.check(rt.query("RoomA@netSpeed", "", Role{"admin"}).records.size() == 2,
            "RoomA stopped ingesting after leave");
  rep.check(rt.query("RoomB@netSpeed", "", Role{"admin"}).records.size() == 4,
            "RoomB keeps ingesting");
  rep.check(rt.source_map() == rt.oracle_source_map(),
            "source map equals resolve_all");

  // bssid was trimmed at the ingress; lineage tracks the phone hop.
  auto recs = rt.store().records("RoomB", "main");
  bool shape_ok = !recs.empty();
  for (const auto& r : recs) {
    shape_ok = shape_ok && r.find("bssid") == nullptr && r.find("from") &&
               r.find("from")->as_array().size() == 1;
  }
  rep.check(shape_ok, "ingress flow trimmed fields and patched lineage");
  return rep;
}

Report s4_policy(uint64_t, int, const fs::path& dir) {
  Report rep{"s4_policy"};
  AclTable acl;
  acl.add("staff", *TargetPattern::parse("*@netSpeed"));
  acl.add("staff", *TargetPattern::parse("*@occupancy"));
  acl.add("staff", *TargetPattern::parse("*@energy"));
  acl.add("student", *TargetPattern::parse("BioLab@netSpeed"));
  acl.add("student", *TargetPattern::parse("BioLab@occupancy"));
  auto opts = harness_opts(dir);
  opts.acl = acl;
  Runtime rt(opts);

  rt.apply_text(
      "kind: cot.dev/v1/Building\nname: BioHall\nrole: building\n"
      "egress:\n"
      "  - name: energy\n"
      "    policy: {mode: allow, roles: [staff, building]}\n"
      "  - name: occupancy\n"
      "---\n"
      "kind: cot.dev/v1/Room\nname: BioLab\nrole: room\n"
      "egress:\n"
      "  - name: occupancy\n"
      "  - name: netSpeed\n"
      "  - name: energy\n"
      "---\n"
      "kind: cot.dev/v1/Pad\nname: StaffView\nrole: staff\n"
      "ingress:\n  - name: in\n    intent: [\"any@energy\"]\n"
      "---\n"
      "kind: cot.dev/v1/Pad\nname: StudentPad\nrole: student\n"
      "ingress:\n  - name: in\n    intent: [\"any@energy\"]\n");
  rt.load("BioHall", parse_lines("{room_energy:80,unit:\"watt\"}"));
  rt.load("BioLab", parse_lines("{occupancy:0.5}\n{watt:42.}"));
  rep.check(rt.quiesce(30s), "quiesce");

  // Join-time policy (the allow() line of the composition algorithm): a
  // student-role parent never acquires BioHall@energy as a source.
  rt.join("BioHall", "StudentPad");
  rt.join("BioHall", "StaffView");
  auto sources_of = [&](const std::string& ctx) {
    auto map = rt.source_map();
    std::vector<std::string> out;
    for (const auto& e : map[{ctx, "in"}])
      out.push_back(e.ctx + "@" + e.egress);
    return out;
  };
  auto student_sources = sources_of("StudentPad");
  rep.check(std::find(student_sources.begin(), student_sources.end(),
                      "BioHall@energy") == student_sources.end(),
            "student-role parent never acquires BioHall@energy");
  auto staff_sources = sources_of("StaffView");
  rep.check(std::find(staff_sources.begin(), staff_sources.end(),
                      "BioHall@energy") != staff_sources.end(),
            "staff-role parent acquires BioHall@energy");

  // Query-time ACL: student restricted to BioLab occupancy/netSpeed.
  auto denied = [&](const std::string& target, const std::string& role) {
    try {
      rt.query(target, "", Role{role});
      return false;
    } catch (const access_denied&) {
      return true;
    }
  };
  rep.check(denied("BioHall@energy", "student"), "student denied BioHall@energy");
  rep.check(!denied("BioLab@occupancy", "student"),
            "student allowed BioLab@occupancy");
  rep.check(denied("BioLab@energy", "student"), "student denied BioLab@energy");
  rep.check(!denied("BioHall@energy", "staff"), "staff allowed BioHall@energy");
  rep.check(!denied("BioLab@energy", "staff"), "staff allowed BioLab@energy");
  rep.check(!denied("BioHall@occupancy", "staff"),
            "staff allowed BioHall@occupancy");
  return rep;
}

Report s6_automation(uint64_t seed, int, const fs::path& dir) {
  Report rep{"s6_automation"};
  Runtime rt(harness_opts(dir));
  // The room derives occupancy samples from motion and runs a log-sink
  // automation over them: every positive sample files an overcrowding alert.
  rt.apply_text(
      "kind: cot.dev/v1/Room\nname: den\n"
      "ingress:\n"
      "  - name: occ_in\n"
      "    intent: [\"*/*/Motion@detected\"]\n"
      "    flow: \"rename occupancy:=detected | shape(this, <{occupancy:float64}>) | cut occupancy,event_ts\"\n"
      "egress:\n"
      "  - name: occupancy\n"
      "    flow: \"where has(occupancy) | cut occupancy,event_ts,ts\"\n"
      "  - name: alerts\n"
      "    flow: \"where has(occupancy) and occupancy == 1. | log(\\\"overcrowd\\\")\"\n"
      "---\n"
      "kind: cot.dev/v1/Motion\nname: den_motion\negress:\n  - name: detected\n");
  rt.join("den_motion", "den");

  // Subscribe before the data arrives (the watch() automation path).
  auto watcher = rt.watch("den", "occupancy", Role{"admin"});

  ConnectorSpec spec;
  spec.kind = ConnectorSpec::Kind::Generator;
  spec.target_ctx = "den_motion";
  spec.payload = ConnectorSpec::Payload::Motion;
  spec.rate = 50;
  spec.duration = 2.0;
  spec.seed = seed;
  spec.virtual_time = true;
  spec.batch = 10;
  spec.p_true = 0.4;
  auto conn = run_connector(rt, spec);
  rep.check(conn.ok(), "connector ran");
  rep.check(rt.quiesce(30s), "quiesce");

  // Oracle: count the true detections in the device store.
  uint64_t expect_alerts = 0;
  for (const auto& r : rt.store().records("den_motion", "main")) {
    if (r.find("detected")->as_bool()) expect_alerts++;
  }
  rep.note("expecting " + std::to_string(expect_alerts) + " alerts from " +
           std::to_string(conn.loaded) + " motion records");

  // The log-sink action filed one alert per positive sample, with a reason.
  auto alerts = rt.store().has_branch("den", "errors")
                    ? rt.store().records("den", "errors")
                    : std::vector<TypedRecord>{};
  uint64_t overcrowd = 0;
  for (const auto& r : alerts) {
    const Value* reason = r.find("_reason");
    if (reason && reason->as_string() == "overcrowd") overcrowd++;
  }
  rep.check(overcrowd == expect_alerts,
            "alert count equals positive detections (" +
                std::to_string(overcrowd) + ")");
  // The alerts view itself stays empty: the sink consumed the records.
  rep.check(rt.query("den@alerts", "", Role{"admin"}).records.empty(),
            "alerts view is empty (records were consumed by the sink)");

  // The watch() subscriber saw every occupancy sample exactly once.
  uint64_t streamed = 0;
  while (auto commit = watcher.next(50ms)) streamed += commit->records.size();
  rep.check(streamed == conn.loaded,
            "watch subscriber received every occupancy sample (" +
                std::to_string(streamed) + ")");
  return rep;
}

Report s7_heterogeneous(uint64_t, int, const fs::path& dir) {
  Report rep{"s7_heterogeneous"};
  Runtime rt(harness_opts(dir));
  std::string yaml;
  for (const char* room : {"biolab", "office", "lounge"}) {
    yaml += "kind: cot.dev/v1/Room\nname: " + std::string(room) +
            "\negress:\n  - name: energy\n---\n";
  }
  yaml +=
      "kind: apple.com/v1/iphone\nname: AlicePhone\n"
      "ingress:\n"
      "  - name: energy_in\n"
      "    intent: [\"any@energy\"]\n"
      "    flow: \"rename watt:=power | shape(this, <{watt:float64}>) | cut watt,event_ts,from\"\n"
      "    patch_from: true\n"
      "egress:\n"
      "  - name: energy\n"
      "    flow: \"where has(watt) | cut watt,event_ts,from,ts\"\n";
  for (const auto& r : rt.apply_text(yaml)) rep.check(r.applied, "apply " + r.name);

  // The three heterogeneous readings of the scenario, one per room.
  rt.load("biolab", parse_lines(
                        "{watt:\"80\",from:\"biolab\",event_ts:2026-01-01T00:00:01Z}"));
  rt.load("office", parse_lines(
                        "{watt:null,from:\"office\",event_ts:2026-01-01T00:00:02Z}"));
  rt.load("lounge",
          parse_lines("{power:120.,unit:\"watt\",from:\"lounge\",event_ts:2026-01-01T00:00:03Z}"));

  for (const char* room : {"biolab", "office", "lounge"})
    rt.join(room, "AlicePhone");
  rep.check(rt.quiesce(30s), "quiesce");

  auto main = rt.store().records("AlicePhone", "main");
  rep.check(main.size() == 3, "phone ingested all three readings");
  std::map<std::string, const TypedRecord*> by_origin;
  for (const auto& r : main) {
    const Value* from = r.find("from");
    if (from && from->is_array() && !from->as_array().empty())
      by_origin[from->as_array()[0].as_string()] = &r;
  }
  auto check_one = [&](const std::string& origin, bool null_watt, double watt) {
    auto it = by_origin.find(origin);
    if (it == by_origin.end()) {
      rep.check(false, "record from " + origin + " present");
      return;
    }
    const TypedRecord& r = *it->second;
    const DataType* t = r.type_of("watt");
    rep.check(t != nullptr && t->kind() == TypeKind::Float64,
              origin + " watt is float64");
    if (null_watt) {
      rep.check(r.find("watt")->is_null(), origin + " watt is null");
    } else {
      rep.check(r.find("watt")->is_float() &&
                    r.find("watt")->as_float() == watt,
                origin + " watt is " + fmt_double(watt));
    }
    // Normalized shape: watt,event_ts,from plus the router's own ts.
    rep.check(r.find("unit") == nullptr && r.find("power") == nullptr,
              origin + " extraneous fields cut");
    rep.check(r.find("from")->as_array().size() == 2 &&
                  r.find("from")->as_array()[1].as_string() == origin + "@energy",
              origin + " lineage grew one hop");
  };
  check_one("biolab", false, 80.0);
  check_one("office", true, 0.0);
  check_one("lounge", false, 120.0);

  // The phone's own egress re-exports the cleaned series.
  auto out = rt.query("AlicePhone@energy", "avg(watt)", Role{"admin"});
  rep.check(!out.records.empty() &&
                out.records[0].find("avg")->as_float() == 100.0,
            "avg over cleaned readings skips the null (100.0)");
  return rep;
}

}  // namespace

std::vector<std::string> scenario_names() {
  return {"s1_query",  "s2_compose",     "s3_opportunistic",
          "s4_policy", "s6_automation", "s7_heterogeneous"};
}

Report run_scenario(const std::string& name, uint64_t seed, int rooms,
                    const fs::path& work_dir) {
  fs::remove_all(work_dir);
  fs::create_directories(work_dir);
  if (name == "s1_query") return s1_query(seed, rooms, work_dir);
  if (name == "s2_compose") return s2_compose(seed, rooms, work_dir);
  if (name == "s3_opportunistic") return s3_opportunistic(seed, rooms, work_dir);
  if (name == "s4_policy") return s4_policy(seed, rooms, work_dir);
  if (name == "s6_automation") return s6_automation(seed, rooms, work_dir);
  if (name == "s7_heterogeneous") return s7_heterogeneous(seed, rooms, work_dir);
  Report rep{name};
  rep.check(false, "unknown scenario (known: s1_query s2_compose "
                   "s3_opportunistic s4_policy s6_automation s7_heterogeneous)");
  return rep;
}

// ---------------------------------------------------------------------------
// Benchmark

BenchReport bench_query_orientation(int rooms, int records_per_device,
                                    uint64_t seed, const fs::path& work_dir) {
  BenchReport bench;
  Report& rep = bench.report;
  rep.name = "bench_query_orientation";
  fs::remove_all(work_dir);
  Runtime rt(harness_opts(work_dir));
  Campus campus = build_campus(rt, rooms, false);
  double virtual_seconds = 100.0;
  feed_campus(rt, campus, records_per_device, seed, virtual_seconds);
  rep.check(rt.quiesce(120s), "pipelets quiesce");
  Timestamp cutoff{kVirtualStart.ns + int64_t((virtual_seconds - 60.0) * kNs)};
  std::string window = "where event_ts > " + ts_literal(cutoff);

  int occupied_ctx = 0, occupied_dev = 0;
  auto t0 = std::chrono::steady_clock::now();
  std::vector<double> ctx_rates, ctx_energy;
  for (const auto& room : campus.rooms) {
    auto occ_count = rt.query(room + "@occupancy",
                              window + " | where occupancy == 1. | count()",
                              Role{"admin"});
    bench.context_scanned += occ_count.scanned;
    bool occ = occ_count.records[0].find("count")->as_int() > 0;
    occupied_ctx += occ;

    auto rate = rt.query(room + "@occupancy", window + " | avg(occupancy)",
                         Role{"admin"});
    bench.context_scanned += rate.scanned;
    ctx_rates.push_back(rate.records.empty()
                            ? 0.0
                            : rate.records[0].find("avg")->as_float());
    auto energy =
        rt.query(room + "@energy", window + " | avg(watt)", Role{"admin"});
    bench.context_scanned += energy.scanned;
    ctx_energy.push_back(energy.records.empty()
                             ? 0.0
                             : energy.records[0].find("avg")->as_float());
  }
  bench.context_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                t0)
          .count();

  t0 = std::chrono::steady_clock::now();
  size_t i = 0;
  for (const auto& room : campus.rooms) {
    RoomOracle oracle = device_path_oracle(rt, campus, room, cutoff);
    // Mirror the context path's three passes: the two occupancy questions
    // scan the raw motion records, the energy question scans the plugs.
    bench.device_scanned += 2 * oracle.motion_scanned + oracle.plug_scanned;
    occupied_dev += oracle.occupied;
    rep.check(std::fabs(ctx_rates[i] - oracle.occupancy_rate) < 1e-9,
              room + " occupancy rate: context==device (" +
                  fmt_double(oracle.occupancy_rate) + ")");
    rep.check(std::fabs(ctx_energy[i] - oracle.energy_avg) < 1e-9,
              room + " energy: context==device (" +
                  fmt_double(oracle.energy_avg) + ")");
    i++;
  }
  bench.device_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                t0)
          .count();

  rep.check(occupied_ctx == occupied_dev,
            "building occupancy equal: " + std::to_string(occupied_ctx) + "/" +
                std::to_string(rooms) + " rooms occupied on both paths");
  rep.check(bench.context_scanned < bench.device_scanned,
            "context path scans fewer records (" +
                std::to_string(bench.context_scanned) + " < " +
                std::to_string(bench.device_scanned) + ")");
  rep.note("context " + std::to_string(bench.context_ms) + " ms, device " +
           std::to_string(bench.device_ms) + " ms");
  return bench;
}

// ---------------------------------------------------------------------------
// Crash/restart driver

namespace {

const char* kChainYaml =
    "kind: cot.dev/v1/Motion\nname: dev\negress:\n  - name: out\n"
    "---\n"
    "kind: cot.dev/v1/Room\nname: room\n"
    "ingress:\n  - name: in\n    intent: [\"*/*/Motion@out\"]\n"
    "egress:\n  - name: relay\n"
    "---\n"
    "kind: cot.dev/v1/Building\nname: bldg\n"
    "ingress:\n  - name: in\n    intent: [\"*/*/Room@relay\"]\n";

struct KillSwitch {
  std::atomic<int> countdown{-1};  // loads on guarded pools until the crash
  int stage_pick = 0;

  Store::Failpoint failpoint() {
    return [this](std::string_view stage, std::string_view pool,
                  std::string_view, CommitId) {
      if (pool != "room" && pool != "bldg") return;
      static constexpr std::string_view stages[] = {"pre_data", "post_data",
                                                    "post_msg", "post_journal"};
      if (stage != stages[stage_pick % 4]) return;
      int left = countdown.load();
      while (left > 0 &&
             !countdown.compare_exchange_weak(left, left - 1)) {
      }
      if (left == 1) throw crash_error("injected kill");
    };
  }
};

}  // namespace

CrashReport crash_test(int records, int kill_points, uint64_t seed,
                       const fs::path& work_dir, bool disable_cursor_filter) {
  CrashReport out;
  Report& rep = out.report;
  rep.name = disable_cursor_filter ? "crash_test(negative-control)"
                                   : "crash_test";
  fs::remove_all(work_dir);
  std::mt19937_64 rng(seed);

  const int chunk = 50;
  int loaded = 0;
  auto kill_switch = std::make_shared<KillSwitch>();

  for (int incarnation = 0; incarnation <= kill_points; incarnation++) {
    bool final_run = incarnation == kill_points;
    if (final_run) {
      kill_switch->countdown.store(-1);  // disarm
    } else {
      kill_switch->stage_pick = int(rng() % 4);
      kill_switch->countdown.store(1 + int(rng() % 6));
    }

    auto opts = harness_opts(work_dir);
    opts.disable_ingress_cursor_filter = disable_cursor_filter;
    opts.failpoint = [kill_switch](std::string_view stage, std::string_view pool,
                                   std::string_view branch, CommitId id) {
      kill_switch->failpoint()(stage, pool, branch, id);
    };
    Runtime rt(opts);
    if (incarnation == 0) {
      for (const auto& r : rt.apply_text(kChainYaml)) {
        if (!r.applied) {
          rep.check(false, "apply failed: " + r.error);
          return out;
        }
      }
      rt.join("dev", "room");
      rt.join("room", "bldg");
    }

    // Feed a slice of the input so later kills still have work in flight.
    int budget = final_run ? records - loaded
                           : std::min(records - loaded,
                                      std::max(chunk, records / kill_points));
    while (budget > 0 && !rt.crashed()) {
      int n = std::min(chunk, budget);
      std::vector<TypedRecord> batch;
      for (int i = 0; i < n; i++) {
        batch.push_back(
            TypedRecord::make({{"seq", Value::integer(loaded + i)}}));
      }
      try {
        rt.load("dev", std::move(batch));
      } catch (const crash_error&) {
        break;
      } catch (const store_closed&) {
        break;
      }
      loaded += n;
      budget -= n;
    }

    if (final_run) {
      bool done = rt.quiesce(std::chrono::seconds(60));
      if (!done && !rt.crashed()) {
        rep.check(false, "final incarnation failed to quiesce");
        for (const auto& e : rt.edge_errors()) rep.note(e);
        return out;
      }
    } else {
      // Wait for the injected kill (or completion of this slice).
      auto deadline = std::chrono::steady_clock::now() + 20s;
      while (!rt.crashed() && std::chrono::steady_clock::now() < deadline) {
        if (kill_switch->countdown.load() != 0 && rt.quiesce(50ms)) break;
        std::this_thread::sleep_for(2ms);
      }
      if (rt.crashed()) out.kills_fired++;
    }
  }

  // Verification oracle: the building store holds each seq exactly once, in
  // order, with event_ts strictly increasing (ts order along the chain).
  Store store({work_dir / "store"});
  auto final_records = store.records("bldg", "main");
  out.final_count = final_records.size();
  std::vector<int64_t> seqs;
  bool ordered = true;
  Timestamp prev_event = Timestamp::min();
  for (const auto& r : final_records) {
    seqs.push_back(r.find("seq")->as_int());
    Timestamp ev = r.find("event_ts")->as_time();
    if (ev <= prev_event) ordered = false;
    prev_event = ev;
  }
  std::vector<int64_t> sorted = seqs;
  std::sort(sorted.begin(), sorted.end());
  bool exactly_once = int(sorted.size()) == records;
  for (int i = 0; i < int(sorted.size()) && exactly_once; i++) {
    if (sorted[size_t(i)] != i) exactly_once = false;
  }
  bool in_order = std::is_sorted(seqs.begin(), seqs.end()) && ordered;

  rep.check(exactly_once, "each derived record exactly once (" +
                              std::to_string(final_records.size()) + "/" +
                              std::to_string(records) + ")");
  rep.check(in_order, "target preserves source ts order");
  rep.note(std::to_string(out.kills_fired) + " kills fired");
  return out;
}

// ---------------------------------------------------------------------------
// Durability driver

Report durability_test(int kill_points, uint64_t seed,
                       const fs::path& work_dir) {
  Report rep{"durability_test"};
  fs::remove_all(work_dir);
  std::mt19937_64 rng(seed);
  static constexpr std::string_view stages[] = {"pre_data", "post_data",
                                                "post_msg", "post_journal"};
  int64_t committed = 0;  // commits known durable
  for (int kill = 0; kill < kill_points; kill++) {
    std::string_view armed_stage = stages[rng() % 4];
    int countdown = 1 + int(rng() % 4);
    bool crashed = false;
    {
      Store store({work_dir,
                   [&](std::string_view stage, std::string_view,
                       std::string_view, CommitId) {
                     if (stage != armed_stage) return;
                     if (--countdown == 0) throw crash_error("kill");
                   }});
      store.create_pool("p");
      if (int64_t(store.next_commit_id("p", "main")) < committed) {
        rep.check(false, "reopen lost a committed prefix at kill " +
                             std::to_string(kill));
        return rep;
      }
      committed = int64_t(store.next_commit_id("p", "main"));
      try {
        for (int i = 0; i < 8; i++) {
          CommitId id = store.load(
              "p", "main",
              {TypedRecord::make({{"commit", Value::integer(committed)},
                                  {"i", Value::integer(i)}})},
              {{"k", std::to_string(kill)}});
          committed = int64_t(id) + 1;
        }
      } catch (const crash_error&) {
        crashed = true;
        if (armed_stage == "post_journal") committed++;  // durable before kill
      }
    }
    // Reopen and verify the journal prefix: dense ids, parseable files.
    Store reopened({work_dir});
    auto commits = reopened.commits("p", "main");
    bool dense = true;
    for (size_t i = 0; i < commits.size(); i++) {
      if (commits[i].id != i || commits[i].records.empty()) dense = false;
    }
    rep.check(dense && int64_t(commits.size()) == committed,
              "kill " + std::to_string(kill) + " at " +
                  std::string(armed_stage) + (crashed ? " (fired)" : " (idle)") +
                  ": clean prefix of " + std::to_string(commits.size()));
    if (!rep.passed) return rep;
  }
  return rep;
}

}  // namespace ctxr::harness
