// Shared generator for composition fuzzing: random contexts with mixed
// direct/kind/any intents, rules and egress policies, driven through random
// join/leave sequences and checked against the resolve_all oracle.
#pragma once

#include <random>
#include <string>
#include <vector>

#include "ctxr/cdg.hpp"

namespace ctxr::fuzz {

struct ComposeWorld {
  ContextMap contexts;
  AssociationLog log;
  std::vector<std::string> names;
};

inline ComposeWorld make_world(std::mt19937_64& rng, int n_contexts) {
  ComposeWorld w;
  const char* groups[] = {"cot.dev", "vendor_x", "acme"};
  const char* versions[] = {"v1", "v2"};
  const char* kinds[] = {"Room", "Phone", "Motion", "Building"};
  const char* egresses[] = {"energy", "occupancy", "noise", "detected"};
  const char* roles[] = {"staff", "student", "building", "device"};

  for (int i = 0; i < n_contexts; i++) {
    std::string name = "ctx" + std::to_string(i);
    std::string yaml = "kind: " + std::string(groups[rng() % 3]) + "/" +
                       versions[rng() % 2] + "/" + kinds[rng() % 4] + "\n";
    yaml += "name: " + name + "\n";
    yaml += "role: " + std::string(roles[rng() % 4]) + "\n";

    int n_egress = int(rng() % 3);
    if (n_egress) {
      yaml += "egress:\n";
      for (int e = 0; e < n_egress; e++) {
        std::string id = egresses[rng() % 4];
        id += std::to_string(e);  // unique per context
        yaml += "  - name: " + id + "\n";
        int pol = int(rng() % 4);
        if (pol == 1) {
          yaml += "    policy: {mode: allow, roles: [staff, building]}\n";
        } else if (pol == 2) {
          yaml += "    policy: {mode: block, roles: [student]}\n";
        } else if (pol == 3) {
          yaml += "    policy: {mode: allow, roles: ['*']}\n";
        }
        if (rng() % 2) {
          yaml += "    schemas: [\"{watt:string,from:string}\", \"{power:float64}\"]\n";
        }
      }
    }

    int n_ingress = int(rng() % 3);
    if (n_ingress) {
      yaml += "ingress:\n";
      for (int g = 0; g < n_ingress; g++) {
        yaml += "  - name: in" + std::to_string(g) + "\n";
        yaml += "    intent:\n";
        int n_intents = 1 + int(rng() % 2);
        for (int t = 0; t < n_intents; t++) {
          std::string egress = std::string(egresses[rng() % 4]) +
                               std::to_string(rng() % 2);
          switch (rng() % 4) {
            case 0:
              yaml += "      - \"any@" + egress + "\"\n";
              break;
            case 1: {
              std::string g3 = rng() % 2 ? "*" : groups[rng() % 3];
              std::string v3 = rng() % 2 ? "*" : versions[rng() % 2];
              yaml += "      - \"" + g3 + "/" + v3 + "/" + kinds[rng() % 4] +
                      "@" + egress + "\"\n";
              break;
            }
            default:
              yaml += "      - \"ctx" + std::to_string(rng() % n_contexts) +
                      "@" + egress + "\"\n";
          }
        }
        if (rng() % 3 == 0) {
          yaml += "    rules:\n";
          yaml += "      - {match: \"has(<watt:string>)\", action: \"extract\"}\n";
          yaml += "      - {match: \"has(<power:float64>)\", action: \"rename watt:=power\"}\n";
          if (rng() % 2) yaml += "      - {match: \"*\", action: \"reject\"}\n";
        }
      }
    }

    auto cfgs = ContextConfig::parse_yaml(yaml);
    w.contexts[name] = std::make_unique<ContextState>(std::move(cfgs.at(0)));
    w.names.push_back(name);
  }
  return w;
}

/// Runs `events` random join/leave operations; returns false with a message
/// when the incremental map diverges from the oracle.
inline bool run_sequence(ComposeWorld& w, std::mt19937_64& rng, int events,
                         std::string* diag = nullptr) {
  Timestamp clock{1000};
  for (int e = 0; e < events; e++) {
    const std::string& child = w.names[rng() % w.names.size()];
    const std::string& parent = w.names[rng() % w.names.size()];
    clock.ns += 1;
    bool open = w.log.has_open(child, parent);
    try {
      if (!open && rng() % 3 != 0) {
        on_join(w.contexts, w.log, child, parent, clock);
      } else if (open) {
        if (rng() % 2) {
          on_leave(w.contexts, w.log, child, parent, clock);
        } else {
          continue;
        }
      } else {
        continue;
      }
    } catch (const composition_error&) {
      if (diag) *diag = "unexpected composition error";
      return false;
    }
    if (e % 16 == 0) {
      if (snapshot_source_map(w.contexts) != resolve_all(w.contexts, w.log)) {
        if (diag) *diag = "divergence after event " + std::to_string(e);
        return false;
      }
    }
  }
  if (snapshot_source_map(w.contexts) != resolve_all(w.contexts, w.log)) {
    if (diag) *diag = "divergence at sequence end";
    return false;
  }
  return true;
}

}  // namespace ctxr::fuzz
