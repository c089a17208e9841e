#pragma once

// Declarative DC-observable circuit requirements and their verdicts. Checks
// are evaluated against dcsim results; every failing outcome carries a
// machine-parsable "CODE: detail" message for the repair loop.

#include <string>
#include <variant>
#include <vector>

#include "menter/dcsim.hpp"
#include "menter/netlist.hpp"

namespace menter {

struct OpPointCheck {
  std::string node;
  double expected = 0.0;
  double tol = 1e-3;
};

struct LinearFitCheck {
  std::string output;
  std::string source;
  double lo = 0.0, hi = 0.0;
  double slope = 0.0, intercept = 0.0;
  double slope_tol = 0.0;
  double intercept_tol = -1.0;  // < 0: intercept unchecked
};

struct MonotoneCheck {
  std::string output;
  std::string source;
  double lo = 0.0, hi = 0.0;
  bool increasing = true;
};

struct RailBoundCheck {
  std::string node;
  double lo = 0.0, hi = 0.0;
};

struct RegionCheck {
  std::string device;
  MosRegion region = MosRegion::Saturation;
};

using Check =
    std::variant<OpPointCheck, LinearFitCheck, MonotoneCheck, RailBoundCheck, RegionCheck>;

/// "OPPOINT", "LINFIT", "MONOTONE", "RAILBOUND", "REGION".
const char* check_code(const Check& check);

struct SpecRequirement {
  std::vector<Check> checks;
};

struct CheckOutcome {
  Check check;
  bool passed = false;
  std::vector<double> measured;
  std::string message;  // "CODE: detail"; nonempty on failure
};

/// Sweeps used by LinearFit/Monotone checks run at this resolution.
inline constexpr int kLinearFitPoints = 21;

/// Evaluates every check (no short-circuit); one sweep per distinct
/// (source, range); simulation failures become failing outcomes.
std::vector<CheckOutcome> evaluate_spec(const FlatCircuit& flat, const SpecRequirement& spec,
                                        const SolverOptions& opts = {});

/// JSON schema: {"version": 1, "checks": [{"type": "op_point", ...}, ...]}.
SpecRequirement spec_from_json_text(const std::string& text);
std::string spec_to_json_text(const SpecRequirement& spec);

/// Query text used by the lexical retrievers (circuit think tank).
std::string spec_summary_text(const SpecRequirement& spec);

std::string outcomes_to_json(const std::vector<CheckOutcome>& outcomes);
std::string outcomes_to_table(const std::vector<CheckOutcome>& outcomes);

}  // namespace menter
