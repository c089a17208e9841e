#include "menter/dcsim.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "menter/util.hpp"

namespace menter {

const char* region_name(MosRegion r) {
  switch (r) {
    case MosRegion::Cutoff: return "cutoff";
    case MosRegion::Triode: return "triode";
    case MosRegion::Saturation: return "saturation";
  }
  return "?";
}

const char* strategy_name(SolveStrategy s) {
  switch (s) {
    case SolveStrategy::Plain: return "plain";
    case SolveStrategy::GminStep: return "gmin_step";
    case SolveStrategy::SourceStep: return "source_step";
  }
  return "?";
}

namespace {

// Forward-biased square law, vds >= 0. Exact analytic partials.
DeviceEval square_law(double beta, double vto, double lambda, double vgs, double vds) {
  DeviceEval ev;
  const double vov = vgs - vto;
  if (vov <= 0.0) {
    ev.region = MosRegion::Cutoff;
    return ev;
  }
  const double clm = 1.0 + lambda * vds;
  if (vds < vov) {
    ev.region = MosRegion::Triode;
    const double q = vov * vds - 0.5 * vds * vds;
    ev.id = beta * q * clm;
    ev.gm = beta * vds * clm;
    ev.gds = beta * ((vov - vds) * clm + q * lambda);
  } else {
    ev.region = MosRegion::Saturation;
    const double q = 0.5 * vov * vov;
    ev.id = beta * q * clm;
    ev.gm = beta * vov * clm;
    ev.gds = beta * q * lambda;
  }
  return ev;
}

}  // namespace

DeviceEval mosfet_eval(const ModelCard& model, double w, double l, double vgs, double vds) {
  const double beta = model.kp * (w / (l > 0.0 ? l : 1e-6));
  if (vds >= 0.0) {
    return square_law(beta, model.vto, model.lambda, vgs, vds);
  }
  // Role swap: the terminal at lower potential acts as the source.
  DeviceEval sw = square_law(beta, model.vto, model.lambda, vgs - vds, -vds);
  DeviceEval ev;
  ev.region = sw.region;
  ev.id = -sw.id;
  ev.gm = -sw.gm;          // d(-id')/dvgs
  ev.gds = sw.gm + sw.gds; // d(-id')/dvds with vgs' = vgs - vds, vds' = -vds
  return ev;
}

double DCSolution::voltage(std::string_view node) const {
  auto it = node_voltages.find(fold(node));
  return it == node_voltages.end() ? 0.0 : it->second;
}

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Dev {
  ElementKind kind;
  int a = -1, b = -1;            // two-terminal unknown indexes, -1 = ground
  int d = -1, g = -1, s = -1;    // mosfet unknown indexes
  double value = 0.0;
  int branch = -1;               // V-source branch row/col
  const ModelCard* card = nullptr;
  double w = 1e-6, l = 1e-6;
  bool pmos = false;
  const Element* elem = nullptr;
};

class Assembler {
 public:
  Assembler(const FlatCircuit& flat, const SolverOptions& opts) : flat_(flat), opts_(opts) {
    const int n = flat.node_count();
    node_unknown_.assign(n, -1);
    const int gnd = flat.node_id("0");
    int u = 0;
    for (int i = 0; i < n; ++i) {
      if (i != gnd) node_unknown_[i] = u++;
    }
    n_nodes_ = u;
    for (const Element& e : flat.devices) {
      Dev dev;
      dev.kind = e.kind;
      dev.elem = &e;
      switch (e.kind) {
        case ElementKind::Resistor:
        case ElementKind::Capacitor:
        case ElementKind::VSource:
        case ElementKind::ISource: {
          if (e.nodes.size() != 2) {
            error_ = "device " + e.name + " has wrong terminal count";
            return;
          }
          dev.a = unknown_of(e.nodes[0]);
          dev.b = unknown_of(e.nodes[1]);
          dev.value = e.value ? e.value->magnitude : 0.0;
          if (e.kind == ElementKind::VSource) {
            dev.branch = n_nodes_ + static_cast<int>(vsource_rows_.size());
            vsource_rows_.push_back(static_cast<int>(devs_.size()));
          }
          break;
        }
        case ElementKind::Mosfet: {
          if (e.nodes.size() != 4) {
            error_ = "mosfet " + e.name + " has wrong terminal count";
            return;
          }
          auto mit = e.model_ref ? flat.models.find(fold(*e.model_ref)) : flat.models.end();
          if (mit == flat.models.end()) {
            error_ = "mosfet " + e.name + " references an undefined model";
            return;
          }
          dev.card = &mit->second;
          dev.pmos = mit->second.polarity == Polarity::Pmos;
          dev.d = unknown_of(e.nodes[0]);
          dev.g = unknown_of(e.nodes[1]);
          dev.s = unknown_of(e.nodes[2]);
          auto p = e.params.find("l");
          if (p != e.params.end() && p->second.magnitude > 0.0) dev.l = p->second.magnitude;
          p = e.params.find("w");
          if (p != e.params.end() && p->second.magnitude > 0.0) dev.w = p->second.magnitude;
          nonlinear_ = true;
          break;
        }
        case ElementKind::SubcktInstance:
          error_ = "unflattened instance " + e.name + " in device list";
          return;
      }
      devs_.push_back(dev);
    }
  }

  bool valid() const { return error_.empty(); }
  const std::string& error() const { return error_; }
  int unknowns() const { return n_nodes_ + static_cast<int>(vsource_rows_.size()); }
  int node_unknowns() const { return n_nodes_; }
  bool nonlinear() const { return nonlinear_; }
  const std::vector<Dev>& devices() const { return devs_; }

  /// Index into devices() of a V/I source by folded name, or -1.
  int source_index(std::string_view name) const {
    std::string key = fold(name);
    for (size_t i = 0; i < devs_.size(); ++i) {
      if ((devs_[i].kind == ElementKind::VSource || devs_[i].kind == ElementKind::ISource) &&
          fold(devs_[i].elem->name) == key) {
        return static_cast<int>(i);
      }
    }
    return -1;
  }

  void set_override(int device_index, double value) {
    override_index_ = device_index;
    override_value_ = value;
  }

  double source_value(const Dev& dev) const {
    if (override_index_ >= 0 && &dev == &devs_[override_index_]) return override_value_;
    return dev.value;
  }

  /// Residual F(x) and, when J != nullptr, the Jacobian at x.
  void assemble(const VectorXd& x, VectorXd* F, MatrixXd* J, double diag_gmin,
                double source_scale) const {
    const int m = unknowns();
    F->setZero(m);
    if (J) J->setZero(m, m);
    auto v = [&](int u) { return u < 0 ? 0.0 : x[u]; };
    auto addF = [&](int u, double val) {
      if (u >= 0) (*F)[u] += val;
    };
    auto addJ = [&](int r, int c, double val) {
      if (J && r >= 0 && c >= 0) (*J)(r, c) += val;
    };
    for (const Dev& dev : devs_) {
      switch (dev.kind) {
        case ElementKind::Resistor: {
          double r = dev.value;
          if (std::abs(r) < 1e-12) r = r < 0 ? -1e-12 : 1e-12;
          const double g = 1.0 / r;
          const double i = g * (v(dev.a) - v(dev.b));
          addF(dev.a, i);
          addF(dev.b, -i);
          addJ(dev.a, dev.a, g);
          addJ(dev.a, dev.b, -g);
          addJ(dev.b, dev.a, -g);
          addJ(dev.b, dev.b, g);
          break;
        }
        case ElementKind::Capacitor:
          break;  // open at DC
        case ElementKind::ISource: {
          const double i = source_value(dev) * source_scale;
          addF(dev.a, i);
          addF(dev.b, -i);
          break;
        }
        case ElementKind::VSource: {
          const double e = source_value(dev) * source_scale;
          const double i = x[dev.branch];
          addF(dev.a, i);
          addF(dev.b, -i);
          addJ(dev.a, dev.branch, 1.0);
          addJ(dev.b, dev.branch, -1.0);
          (*F)[dev.branch] = v(dev.a) - v(dev.b) - e;
          addJ(dev.branch, dev.a, 1.0);
          addJ(dev.branch, dev.b, -1.0);
          break;
        }
        case ElementKind::Mosfet: {
          double vgs, vds;
          if (!dev.pmos) {
            vgs = v(dev.g) - v(dev.s);
            vds = v(dev.d) - v(dev.s);
          } else {
            vgs = v(dev.s) - v(dev.g);
            vds = v(dev.s) - v(dev.d);
          }
          ModelCard frame = *dev.card;
          if (dev.pmos) frame.vto = -frame.vto;
          const DeviceEval ev = mosfet_eval(frame, dev.w, dev.l, vgs, vds);
          const double sign = dev.pmos ? -1.0 : 1.0;
          addF(dev.d, sign * ev.id);
          addF(dev.s, -sign * ev.id);
          // The pmos frame flip cancels in the partials: stamps are identical.
          addJ(dev.d, dev.d, ev.gds);
          addJ(dev.d, dev.g, ev.gm);
          addJ(dev.d, dev.s, -ev.gm - ev.gds);
          addJ(dev.s, dev.d, -ev.gds);
          addJ(dev.s, dev.g, -ev.gm);
          addJ(dev.s, dev.s, ev.gm + ev.gds);
          // Channel gmin keeps cutoff devices weakly coupled.
          const double g = opts_.gmin;
          const double ileak = g * (v(dev.d) - v(dev.s));
          addF(dev.d, ileak);
          addF(dev.s, -ileak);
          addJ(dev.d, dev.d, g);
          addJ(dev.d, dev.s, -g);
          addJ(dev.s, dev.d, -g);
          addJ(dev.s, dev.s, g);
          break;
        }
        case ElementKind::SubcktInstance:
          break;
      }
    }
    if (diag_gmin > 0.0) {
      for (int i = 0; i < n_nodes_; ++i) {
        (*F)[i] += diag_gmin * x[i];
        if (J) (*J)(i, i) += diag_gmin;
      }
    }
  }

  VectorXd initial_guess() const {
    VectorXd x = VectorXd::Zero(unknowns());
    for (int idx : vsource_rows_) {
      const Dev& dev = devs_[idx];
      const double e = source_value(dev);
      if (dev.a >= 0 && dev.b < 0) {
        x[dev.a] = e;
      } else if (dev.a < 0 && dev.b >= 0) {
        x[dev.b] = -e;
      }
    }
    return x;
  }

  DCSolution extract(const FlatCircuit& flat, const VectorXd& x) const {
    DCSolution sol;
    const int gnd = flat.node_id("0");
    for (int i = 0; i < flat.node_count(); ++i) {
      sol.node_voltages[fold(flat.node_names[i])] = i == gnd ? 0.0 : x[node_unknown_[i]];
    }
    for (int idx : vsource_rows_) {
      const Dev& dev = devs_[idx];
      sol.source_currents[fold(dev.elem->name)] = x[dev.branch];
    }
    sol.state.assign(x.data(), x.data() + x.size());
    return sol;
  }

 private:
  int unknown_of(const std::string& node) const {
    const int id = flat_.node_id(node);
    return id < 0 ? -1 : node_unknown_[id];
  }

  const FlatCircuit& flat_;
  const SolverOptions& opts_;
  std::vector<Dev> devs_;
  std::vector<int> vsource_rows_;
  std::vector<int> node_unknown_;
  int n_nodes_ = 0;
  bool nonlinear_ = false;
  std::string error_;
};

struct NewtonOutcome {
  bool converged = false;
  int iterations = 0;
  double residual = 0.0;
  std::string diagnosis;
};

NewtonOutcome newton(const Assembler& asmb, VectorXd& x, const SolverOptions& opts,
                     double diag_gmin, double source_scale) {
  NewtonOutcome out;
  const int m = asmb.unknowns();
  if (m == 0) {
    out.converged = true;
    return out;
  }
  VectorXd F(m);
  MatrixXd J(m, m);
  const bool linear = !asmb.nonlinear();
  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    out.iterations = iter;
    asmb.assemble(x, &F, &J, diag_gmin, source_scale);
    VectorXd dx = Eigen::PartialPivLU<MatrixXd>(J).solve(-F);
    if (!dx.allFinite()) {
      out.diagnosis = "singular matrix (structurally unsolvable, e.g. floating island)";
      asmb.assemble(x, &F, nullptr, diag_gmin, source_scale);
      out.residual = F.lpNorm<Eigen::Infinity>();
      return out;
    }
    if (!linear) {
      for (int i = 0; i < asmb.node_unknowns(); ++i) {
        dx[i] = std::clamp(dx[i], -opts.damping, opts.damping);
      }
    }
    x += dx;
    asmb.assemble(x, &F, nullptr, diag_gmin, source_scale);
    out.residual = F.lpNorm<Eigen::Infinity>();
    bool delta_ok = true;
    for (int i = 0; i < asmb.node_unknowns() && delta_ok; ++i) {
      if (std::abs(dx[i]) > opts.reltol * std::abs(x[i]) + 1e-6) delta_ok = false;
    }
    if (out.residual <= opts.abstol && (linear || delta_ok)) {
      out.converged = true;
      return out;
    }
  }
  out.diagnosis = "no convergence within max_iter";
  return out;
}

DCSolution solve_with_strategies(const FlatCircuit& flat, Assembler& asmb,
                                 const SolverOptions& opts, const VectorXd* warm) {
  DCSolution sol;
  if (!asmb.valid()) {
    sol.diagnosis = asmb.error();
    return sol;
  }

  auto finish = [&](const VectorXd& x, const NewtonOutcome& out, SolveStrategy strat,
                    int total_iters) {
    sol = asmb.extract(flat, x);
    sol.converged = out.converged;
    sol.iterations = total_iters;
    sol.residual_norm = out.residual;
    sol.strategy = strat;
    sol.diagnosis = out.diagnosis;
  };

  VectorXd x = warm ? *warm : asmb.initial_guess();
  NewtonOutcome plain = newton(asmb, x, opts, 0.0, 1.0);
  if (plain.converged || !asmb.nonlinear()) {
    finish(x, plain, SolveStrategy::Plain, plain.iterations);
    return sol;
  }
  const std::string plain_diag = plain.diagnosis;

  // gmin stepping: decades from 1e-3 down, then a clean final solve.
  {
    VectorXd xg = asmb.initial_guess();
    int total = plain.iterations;
    bool ok = true;
    for (double g = 1e-3; g >= opts.gmin * 0.999; g *= 0.1) {
      NewtonOutcome stage = newton(asmb, xg, opts, g, 1.0);
      total += stage.iterations;
      if (!stage.converged) {
        ok = false;
        break;
      }
    }
    if (ok) {
      NewtonOutcome fin = newton(asmb, xg, opts, 0.0, 1.0);
      total += fin.iterations;
      if (fin.converged) {
        finish(xg, fin, SolveStrategy::GminStep, total);
        return sol;
      }
    }
  }

  // Source stepping: ramp sources 0 -> 1 in 10 steps.
  {
    VectorXd xs = VectorXd::Zero(asmb.unknowns());
    int total = 0;
    NewtonOutcome stage;
    bool ok = true;
    for (int k = 1; k <= 10; ++k) {
      stage = newton(asmb, xs, opts, 0.0, 0.1 * k);
      total += stage.iterations;
      if (!stage.converged) {
        ok = false;
        break;
      }
    }
    if (ok) {
      finish(xs, stage, SolveStrategy::SourceStep, total);
      return sol;
    }
    finish(xs, stage, SolveStrategy::SourceStep, total);
    sol.converged = false;
    if (sol.diagnosis.empty()) sol.diagnosis = plain_diag;
    return sol;
  }
}

}  // namespace

DCSolution solve_op(const FlatCircuit& flat, const SolverOptions& opts) {
  Assembler asmb(flat, opts);
  return solve_with_strategies(flat, asmb, opts, nullptr);
}

SweepResult dc_sweep(const FlatCircuit& flat, std::string_view source, double start,
                     double stop, double step, const SolverOptions& opts) {
  if (step == 0.0) {
    throw SweepError(SweepError::Kind::StepZero, "sweep step must be nonzero");
  }
  if (stop != start && (stop - start) * step < 0.0) {
    throw SweepError(SweepError::Kind::BadDirection,
                     "sweep step sign must match stop-start");
  }
  Assembler asmb(flat, opts);
  const int src = asmb.valid() ? asmb.source_index(source) : -1;
  if (src < 0) {
    throw SweepError(SweepError::Kind::UnknownSource,
                     "unknown sweep source '" + std::string(source) + "'");
  }

  SweepResult result;
  result.swept_source = std::string(source);
  const int npoints = static_cast<int>(std::floor((stop - start) / step + 1e-9)) + 1;
  std::vector<double> warm_state;
  for (int i = 0; i < npoints; ++i) {
    const double value = start + i * step;
    asmb.set_override(src, value);
    VectorXd warm;
    const VectorXd* warm_ptr = nullptr;
    if (!warm_state.empty()) {
      warm = Eigen::Map<const VectorXd>(warm_state.data(),
                                        static_cast<long>(warm_state.size()));
      warm_ptr = &warm;
    }
    DCSolution sol = solve_with_strategies(flat, asmb, opts, warm_ptr);
    if (sol.converged) {
      warm_state = sol.state;
    } else {
      result.failures.push_back(i);
    }
    result.points.emplace_back(value, std::move(sol));
  }
  return result;
}

std::map<std::string, DeviceEval> mosfet_operating_points(const FlatCircuit& flat,
                                                          const DCSolution& sol) {
  std::map<std::string, DeviceEval> out;
  for (const Element& e : flat.devices) {
    if (e.kind != ElementKind::Mosfet || !e.model_ref) continue;
    auto mit = flat.models.find(fold(*e.model_ref));
    if (mit == flat.models.end() || e.nodes.size() != 4) continue;
    const ModelCard& card = mit->second;
    const double vd = sol.voltage(e.nodes[0]);
    const double vg = sol.voltage(e.nodes[1]);
    const double vs = sol.voltage(e.nodes[2]);
    double w = 1e-6, l = 1e-6;
    auto p = e.params.find("w");
    if (p != e.params.end() && p->second.magnitude > 0.0) w = p->second.magnitude;
    p = e.params.find("l");
    if (p != e.params.end() && p->second.magnitude > 0.0) l = p->second.magnitude;
    ModelCard frame = card;
    double vgs, vds;
    if (card.polarity == Polarity::Pmos) {
      frame.vto = -frame.vto;
      vgs = vs - vg;
      vds = vs - vd;
    } else {
      vgs = vg - vs;
      vds = vd - vs;
    }
    out[fold(e.name)] = mosfet_eval(frame, w, l, vgs, vds);
  }
  return out;
}

std::string sweep_to_csv(const SweepResult& sweep, const FlatCircuit& flat) {
  std::string out = sweep.swept_source;
  for (const std::string& n : flat.node_names) out += "," + n;
  out += "\n";
  for (const auto& [value, sol] : sweep.points) {
    out += format_magnitude(value);
    for (const std::string& n : flat.node_names) {
      out += "," + format_magnitude(sol.voltage(n));
    }
    out += "\n";
  }
  return out;
}

std::string solution_to_json(const DCSolution& sol) {
  nlohmann::json j{{"converged", sol.converged},
                   {"iterations", sol.iterations},
                   {"residual_norm", sol.residual_norm},
                   {"strategy", strategy_name(sol.strategy)},
                   {"node_voltages", sol.node_voltages},
                   {"source_currents", sol.source_currents}};
  if (!sol.diagnosis.empty()) j["diagnosis"] = sol.diagnosis;
  return j.dump(2);
}

std::string sweep_to_json(const SweepResult& sweep, const FlatCircuit& flat) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& [value, sol] : sweep.points) {
    nlohmann::json p{{"value", value}, {"converged", sol.converged}};
    nlohmann::json volts;
    for (const std::string& n : flat.node_names) volts[fold(n)] = sol.voltage(n);
    p["node_voltages"] = volts;
    points.push_back(std::move(p));
  }
  nlohmann::json j{{"source", sweep.swept_source},
                   {"points", points},
                   {"failures", sweep.failures}};
  return j.dump(2);
}

}  // namespace menter
