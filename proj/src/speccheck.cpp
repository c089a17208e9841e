#include "menter/speccheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "json.hpp"
#include "menter/util.hpp"

namespace menter {

namespace {

std::string fmt(double v) {
  std::ostringstream ss;
  ss << v;
  return ss.str();
}

struct SweepKey {
  std::string source;
  double lo, hi;
  bool operator<(const SweepKey& o) const {
    if (source != o.source) return source < o.source;
    if (lo != o.lo) return lo < o.lo;
    return hi < o.hi;
  }
};

}  // namespace

const char* check_code(const Check& check) {
  struct Visitor {
    const char* operator()(const OpPointCheck&) const { return "OPPOINT"; }
    const char* operator()(const LinearFitCheck&) const { return "LINFIT"; }
    const char* operator()(const MonotoneCheck&) const { return "MONOTONE"; }
    const char* operator()(const RailBoundCheck&) const { return "RAILBOUND"; }
    const char* operator()(const RegionCheck&) const { return "REGION"; }
  };
  return std::visit(Visitor{}, check);
}

std::vector<CheckOutcome> evaluate_spec(const FlatCircuit& flat, const SpecRequirement& spec,
                                        const SolverOptions& opts) {
  // Shared simulations: at most one operating point and one sweep per
  // distinct (source, range).
  bool need_op = false;
  std::map<SweepKey, SweepResult> sweeps;
  for (const Check& c : spec.checks) {
    if (std::holds_alternative<OpPointCheck>(c) || std::holds_alternative<RailBoundCheck>(c) ||
        std::holds_alternative<RegionCheck>(c)) {
      need_op = true;
    } else if (const auto* lf = std::get_if<LinearFitCheck>(&c)) {
      sweeps.emplace(SweepKey{fold(lf->source), lf->lo, lf->hi}, SweepResult{});
    } else if (const auto* mc = std::get_if<MonotoneCheck>(&c)) {
      sweeps.emplace(SweepKey{fold(mc->source), mc->lo, mc->hi}, SweepResult{});
    }
  }

  DCSolution op;
  std::string op_error;
  if (need_op) {
    op = solve_op(flat, opts);
    if (!op.converged) {
      op_error = "operating point did not converge (" + op.diagnosis + ")";
    }
  }
  std::map<SweepKey, std::string> sweep_errors;
  for (auto& [key, sweep] : sweeps) {
    const double step = (key.hi - key.lo) / (kLinearFitPoints - 1);
    try {
      sweep = dc_sweep(flat, key.source, key.lo, key.hi, step, opts);
      if (!sweep.failures.empty()) {
        sweep_errors[key] = "sweep of " + key.source + " failed at " +
                            std::to_string(sweep.failures.size()) + " of " +
                            std::to_string(sweep.points.size()) + " points";
      }
    } catch (const SweepError& e) {
      sweep_errors[key] = e.what();
    }
  }

  std::vector<CheckOutcome> outcomes;
  for (const Check& c : spec.checks) {
    CheckOutcome out;
    out.check = c;
    const std::string code = check_code(c);
    auto fail = [&](const std::string& detail) {
      out.passed = false;
      out.message = code + ": " + detail;
    };
    auto pass = [&](const std::string& detail) {
      out.passed = true;
      out.message = code + ": " + detail;
    };

    if (const auto* oc = std::get_if<OpPointCheck>(&c)) {
      if (!op_error.empty()) {
        fail("simulation failed: " + op_error);
      } else {
        const double v = op.voltage(oc->node);
        out.measured = {v};
        if (std::abs(v - oc->expected) <= oc->tol) {
          pass(oc->node + "=" + fmt(v));
        } else {
          fail(oc->node + "=" + fmt(v) + " expected " + fmt(oc->expected) + "±" +
               fmt(oc->tol));
        }
      }
    } else if (const auto* rb = std::get_if<RailBoundCheck>(&c)) {
      if (!op_error.empty()) {
        fail("simulation failed: " + op_error);
      } else {
        const double v = op.voltage(rb->node);
        out.measured = {v};
        if (v >= rb->lo && v <= rb->hi) {
          pass(rb->node + "=" + fmt(v) + " in [" + fmt(rb->lo) + "," + fmt(rb->hi) + "]");
        } else {
          fail(rb->node + "=" + fmt(v) + " outside [" + fmt(rb->lo) + "," + fmt(rb->hi) + "]");
        }
      }
    } else if (const auto* rc = std::get_if<RegionCheck>(&c)) {
      if (!op_error.empty()) {
        fail("simulation failed: " + op_error);
      } else {
        auto regions = mosfet_operating_points(flat, op);
        auto it = regions.find(fold(rc->device));
        if (it == regions.end()) {
          fail("no mosfet named " + rc->device);
        } else {
          out.measured = {it->second.id};
          if (it->second.region == rc->region) {
            pass(rc->device + " in " + region_name(it->second.region));
          } else {
            fail(rc->device + " in " + region_name(it->second.region) + " expected " +
                 region_name(rc->region));
          }
        }
      }
    } else if (const auto* lf = std::get_if<LinearFitCheck>(&c)) {
      const SweepKey key{fold(lf->source), lf->lo, lf->hi};
      auto err = sweep_errors.find(key);
      if (err != sweep_errors.end()) {
        fail("simulation failed: " + err->second);
      } else {
        const SweepResult& sweep = sweeps[key];
        // Least-squares y = slope*x + intercept over the sweep points.
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        const double n = static_cast<double>(sweep.points.size());
        for (const auto& [x, sol] : sweep.points) {
          const double y = sol.voltage(lf->output);
          sx += x;
          sy += y;
          sxx += x * x;
          sxy += x * y;
        }
        const double denom = n * sxx - sx * sx;
        const double slope = (n * sxy - sx * sy) / denom;
        const double intercept = (sy - slope * sx) / n;
        out.measured = {slope, intercept};
        const bool slope_ok = std::abs(slope - lf->slope) <= lf->slope_tol;
        const bool icpt_ok =
            lf->intercept_tol < 0.0 || std::abs(intercept - lf->intercept) <= lf->intercept_tol;
        if (slope_ok && icpt_ok) {
          pass(lf->output + " vs " + lf->source + " slope=" + fmt(slope));
        } else if (!slope_ok) {
          fail(lf->output + " vs " + lf->source + " slope=" + fmt(slope) + " expected " +
               fmt(lf->slope) + "±" + fmt(lf->slope_tol));
        } else {
          fail(lf->output + " vs " + lf->source + " intercept=" + fmt(intercept) +
               " expected " + fmt(lf->intercept) + "±" + fmt(lf->intercept_tol));
        }
      }
    } else if (const auto* mc = std::get_if<MonotoneCheck>(&c)) {
      const SweepKey key{fold(mc->source), mc->lo, mc->hi};
      auto err = sweep_errors.find(key);
      if (err != sweep_errors.end()) {
        fail("simulation failed: " + err->second);
      } else {
        const SweepResult& sweep = sweeps[key];
        bool ok = true;
        double prev = 0;
        bool first = true;
        for (const auto& [x, sol] : sweep.points) {
          const double y = sol.voltage(mc->output);
          if (!first) {
            if (mc->increasing ? (y <= prev - 1e-9) : (y >= prev + 1e-9)) ok = false;
          }
          prev = y;
          first = false;
          out.measured.push_back(y);
        }
        if (ok) {
          pass(mc->output + (mc->increasing ? " nondecreasing" : " nonincreasing") + " vs " +
               mc->source);
        } else {
          fail(mc->output + " not " + (mc->increasing ? "increasing" : "decreasing") +
               " vs " + mc->source);
        }
      }
    }
    outcomes.push_back(std::move(out));
  }
  return outcomes;
}

namespace {

using nlohmann::json;

json check_to_json(const Check& c) {
  json j;
  if (const auto* oc = std::get_if<OpPointCheck>(&c)) {
    j = {{"type", "op_point"}, {"node", oc->node}, {"expected", oc->expected}, {"tol", oc->tol}};
  } else if (const auto* lf = std::get_if<LinearFitCheck>(&c)) {
    j = {{"type", "linear_fit"}, {"output", lf->output}, {"source", lf->source},
         {"lo", lf->lo},         {"hi", lf->hi},         {"slope", lf->slope},
         {"slope_tol", lf->slope_tol}};
    if (lf->intercept_tol >= 0.0) {
      j["intercept"] = lf->intercept;
      j["intercept_tol"] = lf->intercept_tol;
    }
  } else if (const auto* mc = std::get_if<MonotoneCheck>(&c)) {
    j = {{"type", "monotone"},
         {"output", mc->output},
         {"source", mc->source},
         {"lo", mc->lo},
         {"hi", mc->hi},
         {"direction", mc->increasing ? "increasing" : "decreasing"}};
  } else if (const auto* rb = std::get_if<RailBoundCheck>(&c)) {
    j = {{"type", "rail_bound"}, {"node", rb->node}, {"lo", rb->lo}, {"hi", rb->hi}};
  } else if (const auto* rc = std::get_if<RegionCheck>(&c)) {
    j = {{"type", "region"}, {"device", rc->device}, {"region", region_name(rc->region)}};
  }
  return j;
}

Check check_from_json(const json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "op_point") {
    return OpPointCheck{j.at("node").get<std::string>(), j.at("expected").get<double>(),
                        j.at("tol").get<double>()};
  }
  if (type == "linear_fit") {
    LinearFitCheck lf;
    lf.output = j.at("output").get<std::string>();
    lf.source = j.at("source").get<std::string>();
    lf.lo = j.at("lo").get<double>();
    lf.hi = j.at("hi").get<double>();
    lf.slope = j.at("slope").get<double>();
    lf.slope_tol = j.at("slope_tol").get<double>();
    if (j.contains("intercept")) {
      lf.intercept = j.at("intercept").get<double>();
      lf.intercept_tol = j.at("intercept_tol").get<double>();
    }
    return lf;
  }
  if (type == "monotone") {
    MonotoneCheck mc;
    mc.output = j.at("output").get<std::string>();
    mc.source = j.at("source").get<std::string>();
    mc.lo = j.at("lo").get<double>();
    mc.hi = j.at("hi").get<double>();
    mc.increasing = j.at("direction").get<std::string>() != "decreasing";
    return mc;
  }
  if (type == "rail_bound") {
    return RailBoundCheck{j.at("node").get<std::string>(), j.at("lo").get<double>(),
                          j.at("hi").get<double>()};
  }
  if (type == "region") {
    const std::string r = j.at("region").get<std::string>();
    MosRegion region = r == "cutoff"   ? MosRegion::Cutoff
                       : r == "triode" ? MosRegion::Triode
                                       : MosRegion::Saturation;
    return RegionCheck{j.at("device").get<std::string>(), region};
  }
  throw std::runtime_error("unknown check type '" + type + "'");
}

}  // namespace

SpecRequirement spec_from_json_text(const std::string& text) {
  json j = json::parse(text);
  if (j.value("version", 0) != 1) {
    throw std::runtime_error("spec schema version must be 1");
  }
  SpecRequirement spec;
  for (const json& c : j.at("checks")) spec.checks.push_back(check_from_json(c));
  return spec;
}

std::string spec_to_json_text(const SpecRequirement& spec) {
  json checks = json::array();
  for (const Check& c : spec.checks) checks.push_back(check_to_json(c));
  return json{{"version", 1}, {"checks", checks}}.dump(2);
}

std::string spec_summary_text(const SpecRequirement& spec) {
  std::string out;
  for (const Check& c : spec.checks) {
    json j = check_to_json(c);
    out += j.at("type").get<std::string>();
    for (const char* key : {"node", "output", "source", "device"}) {
      if (j.contains(key)) {
        out += ' ';
        out += j.at(key).get<std::string>();
      }
    }
    out += '\n';
  }
  return out;
}

std::string outcomes_to_json(const std::vector<CheckOutcome>& outcomes) {
  json arr = json::array();
  for (const CheckOutcome& o : outcomes) {
    arr.push_back({{"check", check_to_json(o.check)},
                   {"passed", o.passed},
                   {"measured", o.measured},
                   {"message", o.message}});
  }
  return arr.dump(2);
}

std::string outcomes_to_table(const std::vector<CheckOutcome>& outcomes) {
  std::string out;
  for (const CheckOutcome& o : outcomes) {
    out += o.passed ? "[pass] " : "[FAIL] ";
    out += o.message;
    out += '\n';
  }
  return out;
}

}  // namespace menter
