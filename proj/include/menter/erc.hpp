#pragma once

// Structural electrical-rule checks on a flattened circuit. The rule registry
// is a design construction: the connection checker it realizes is named but
// not enumerated by any standard, so the exact rule set lives here.
//
//   E-GND    error    no ground node "0" in the circuit
//   E-FLOAT  warning  node touched by exactly one device terminal
//   E-GATE   warning  MOSFET gate connected only to other gates
//   E-MODEL  error    MOSFET references an undefined model card
//   E-ARITY  error    wrong terminal count for the element kind
//   E-SHORT  error    V source with both terminals on one node
//   E-NOPATH warning  node with no R/V/I/channel path to ground
//
// Warnings promote to errors via ErcOptions.promote_warnings.

#include <string>
#include <vector>

#include "menter/netlist.hpp"

namespace menter {

struct RuleViolation {
  std::string rule_id;
  Severity severity = Severity::Error;
  std::string subject;  // device or node name
  std::string message;
};

struct ErcReport {
  std::vector<RuleViolation> violations;
  bool passed = true;  // no error-severity entries

  std::string first_failure() const;
  std::string to_json_lines() const;
};

struct ErcOptions {
  bool promote_warnings = false;
};

/// Total function; violations ordered by (rule, subject) regardless of the
/// input element order.
ErcReport run_erc(const FlatCircuit& flat, const ErcOptions& opts = {});

}  // namespace menter
