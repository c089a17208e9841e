#pragma once

// DC operating-point and DC-sweep simulation via modified nodal analysis.
// Unknowns are the non-ground node voltages plus one branch current per V
// source. Nonlinear devices (level-1 square-law MOSFETs) are solved with
// damped Newton iteration; gmin stepping and source stepping kick in as
// rescue strategies on non-convergence.

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "menter/netlist.hpp"

namespace menter {

enum class MosRegion { Cutoff, Triode, Saturation };

const char* region_name(MosRegion r);

/// Drain current and its small-signal partials at one bias point.
struct DeviceEval {
  double id = 0.0;   // A, referenced drain -> source
  double gm = 0.0;   // dId/dVgs, S
  double gds = 0.0;  // dId/dVds, S
  MosRegion region = MosRegion::Cutoff;
};

/// Square-law evaluation in the nmos frame: vov = vgs - vto, beta = kp*w/l.
/// Negative vds is handled by drain/source role swap with current negation;
/// the returned gm/gds stay exact partials of id in the caller's frame.
/// pmos devices must be pre-mapped (vgs, vds, vto sign-normalized) before
/// calling.
DeviceEval mosfet_eval(const ModelCard& model, double w, double l, double vgs, double vds);

struct SolverOptions {
  double abstol = 1e-9;    // A
  double reltol = 1e-6;
  int max_iter = 200;
  double gmin = 1e-12;     // S, stamped across MOSFET channels
  double damping = 0.5;    // max Newton step per node, V (nonlinear circuits)
};

enum class SolveStrategy { Plain, GminStep, SourceStep };

const char* strategy_name(SolveStrategy s);

struct DCSolution {
  std::map<std::string, double> node_voltages;   // folded node name -> V ("0" included)
  std::map<std::string, double> source_currents; // folded V-source name -> A
  int iterations = 0;
  double residual_norm = 0.0;  // max |KCL residual|, A
  bool converged = false;
  SolveStrategy strategy = SolveStrategy::Plain;
  std::string diagnosis;  // non-convergence reason, empty when converged

  double voltage(std::string_view node) const;
  /// Raw unknown vector, kept for sweep continuation.
  std::vector<double> state;
};

struct SweepResult {
  std::string swept_source;
  std::vector<std::pair<double, DCSolution>> points;  // strictly ordered by value
  std::vector<int> failures;  // indices of non-converged points
};

class SweepError : public std::runtime_error {
 public:
  enum class Kind { UnknownSource, StepZero, BadDirection };
  SweepError(Kind kind, const std::string& what) : std::runtime_error(what), kind(kind) {}
  Kind kind;
};

DCSolution solve_op(const FlatCircuit& flat, const SolverOptions& opts = {});

/// Solves floor((stop-start)/step)+1 points, warm-starting each from the
/// previous solution. Failed points are recorded, never fatal.
SweepResult dc_sweep(const FlatCircuit& flat, std::string_view source, double start,
                     double stop, double step, const SolverOptions& opts = {});

/// Per-MOSFET bias evaluation at a solved operating point.
std::map<std::string, DeviceEval> mosfet_operating_points(const FlatCircuit& flat,
                                                          const DCSolution& sol);

/// CSV export: header "<source>,node,..." then one row per sweep point.
std::string sweep_to_csv(const SweepResult& sweep, const FlatCircuit& flat);
std::string sweep_to_json(const SweepResult& sweep, const FlatCircuit& flat);
std::string solution_to_json(const DCSolution& sol);

}  // namespace menter
