#include "menter/erc.hpp"

#include <algorithm>
#include <numeric>

#include "json.hpp"
#include "menter/util.hpp"

namespace menter {

namespace {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

size_t expected_arity(ElementKind k) {
  return k == ElementKind::Mosfet ? 4 : 2;
}

}  // namespace

std::string ErcReport::first_failure() const {
  for (const RuleViolation& v : violations) {
    if (v.severity == Severity::Error) {
      return v.rule_id + ": " + v.message;
    }
  }
  return "";
}

std::string ErcReport::to_json_lines() const {
  std::string out;
  for (const RuleViolation& v : violations) {
    nlohmann::json j{{"rule", v.rule_id},
                     {"severity", v.severity == Severity::Error ? "error" : "warning"},
                     {"subject", v.subject},
                     {"message", v.message}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

ErcReport run_erc(const FlatCircuit& flat, const ErcOptions& opts) {
  std::vector<RuleViolation> out;
  auto violate = [&](const char* rule, Severity sev, const std::string& subject,
                     const std::string& message) {
    if (sev == Severity::Warning && opts.promote_warnings) sev = Severity::Error;
    out.push_back({rule, sev, subject, message});
  };

  const int n = flat.node_count();
  const int gnd = flat.node_id("0");
  if (gnd < 0) {
    violate("E-GND", Severity::Error, "0", "circuit has no ground node \"0\"");
  }

  // Terminal touch counts and per-node terminal roles.
  std::vector<int> touches(n, 0);
  std::vector<int> gate_touches(n, 0);
  std::vector<int> nongate_touches(n, 0);
  for (const Element& d : flat.devices) {
    if (d.nodes.size() != expected_arity(d.kind)) {
      violate("E-ARITY", Severity::Error, d.name,
              "device " + d.name + " has " + std::to_string(d.nodes.size()) +
                  " terminals, expected " + std::to_string(expected_arity(d.kind)));
      continue;
    }
    for (size_t t = 0; t < d.nodes.size(); ++t) {
      int id = flat.node_id(d.nodes[t]);
      if (id < 0) continue;
      ++touches[id];
      if (d.kind == ElementKind::Mosfet && t == 1) {
        ++gate_touches[id];
      } else {
        ++nongate_touches[id];
      }
    }
  }

  for (int i = 0; i < n; ++i) {
    if (i == gnd) continue;
    if (touches[i] == 1) {
      violate("E-FLOAT", Severity::Warning, fold(flat.node_names[i]),
              "node " + flat.node_names[i] + " is touched by exactly one terminal");
    }
  }

  for (const Element& d : flat.devices) {
    if (d.kind == ElementKind::Mosfet) {
      if (!d.model_ref || !flat.models.count(fold(*d.model_ref))) {
        violate("E-MODEL", Severity::Error, d.name,
                "mosfet " + d.name + " references undefined model '" +
                    (d.model_ref ? *d.model_ref : std::string("<none>")) + "'");
      }
      if (d.nodes.size() == 4) {
        int g = flat.node_id(d.nodes[1]);
        if (g >= 0 && g != gnd && nongate_touches[g] == 0) {
          violate("E-GATE", Severity::Warning, fold(flat.node_names[g]),
                  "gate node " + flat.node_names[g] + " of " + d.name +
                      " connects only to gates");
        }
      }
    }
    if (d.kind == ElementKind::VSource && d.nodes.size() == 2 &&
        fold(d.nodes[0]) == fold(d.nodes[1])) {
      violate("E-SHORT", Severity::Error, d.name,
              "voltage source " + d.name + " has both terminals on node " + d.nodes[0]);
    }
  }

  // DC-path connectivity over {R, V, I, MOSFET channel} edges.
  if (gnd >= 0 && n > 0) {
    UnionFind uf(n);
    for (const Element& d : flat.devices) {
      switch (d.kind) {
        case ElementKind::Resistor:
        case ElementKind::VSource:
        case ElementKind::ISource: {
          if (d.nodes.size() != 2) break;
          int a = flat.node_id(d.nodes[0]);
          int b = flat.node_id(d.nodes[1]);
          if (a >= 0 && b >= 0) uf.unite(a, b);
          break;
        }
        case ElementKind::Mosfet: {
          if (d.nodes.size() != 4) break;
          int drain = flat.node_id(d.nodes[0]);
          int source = flat.node_id(d.nodes[2]);
          if (drain >= 0 && source >= 0) uf.unite(drain, source);
          break;
        }
        default:
          break;
      }
    }
    int groot = uf.find(gnd);
    for (int i = 0; i < n; ++i) {
      if (uf.find(i) != groot) {
        violate("E-NOPATH", Severity::Warning, fold(flat.node_names[i]),
                "node " + flat.node_names[i] + " has no DC path to ground");
      }
    }
  }

  std::sort(out.begin(), out.end(), [](const RuleViolation& a, const RuleViolation& b) {
    if (a.rule_id != b.rule_id) return a.rule_id < b.rule_id;
    if (a.subject != b.subject) return a.subject < b.subject;
    return a.message < b.message;
  });
  // Dedup identical node-level findings produced once per device.
  out.erase(std::unique(out.begin(), out.end(),
                        [](const RuleViolation& a, const RuleViolation& b) {
                          return a.rule_id == b.rule_id && a.subject == b.subject &&
                                 a.message == b.message;
                        }),
            out.end());

  ErcReport report;
  report.passed = std::none_of(out.begin(), out.end(), [](const RuleViolation& v) {
    return v.severity == Severity::Error;
  });
  report.violations = std::move(out);
  return report;
}

}  // namespace menter
