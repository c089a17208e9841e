#pragma once

// SPICE-subset netlist dialect: parsing, validation, flattening, canonical
// emission. Supported cards: R/C/M/V/I/X elements plus .title/.subckt/.ends/
// .model/.end. Anything else degrades to a diagnostic, never a crash.

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace menter {

enum class Severity { Warning, Error };

struct Diagnostic {
  int line = 0;  // 1-based; 0 when not tied to a location
  int col = 0;
  std::string code;
  std::string message;
  Severity severity = Severity::Error;
};

/// Numeric token with SPICE scale suffixes. `raw` keeps the original spelling
/// for diagnostics; equality compares magnitude only.
struct Value {
  double magnitude = 0.0;
  std::string raw;

  friend bool operator==(const Value& a, const Value& b) {
    return a.magnitude == b.magnitude;
  }
};

class ValueError : public std::runtime_error {
 public:
  explicit ValueError(const std::string& what) : std::runtime_error(what) {}
};

/// Parses "3.3333333333333335kOhm" -> 3333.3333333333335. Suffixes
/// t/g/meg/k/m/u/n/p/f, case-insensitive, "meg" matched before "m"; any
/// trailing unit word is ignored. Throws ValueError when the token has no
/// leading numeric prefix.
Value parse_value(std::string_view token);
std::optional<Value> try_parse_value(std::string_view token);

enum class ElementKind { Resistor, Capacitor, Mosfet, VSource, ISource, SubcktInstance };

char kind_letter(ElementKind k);

struct Element {
  ElementKind kind = ElementKind::Resistor;
  std::string name;
  std::vector<std::string> nodes;
  std::map<std::string, Value> params;  // keys folded (e.g. "l", "w")
  // Mosfet: model card name. SubcktInstance: subckt name.
  std::optional<std::string> model_ref;
  std::optional<Value> value;  // R/C/V/I
};

enum class Polarity { Nmos, Pmos };

struct ModelCard {
  std::string name;
  Polarity polarity = Polarity::Nmos;
  int level = 1;
  double vto = 0.0;
  double kp = 0.0;
  double lambda = 0.0;  // channel-length modulation, defaults to 0
};

struct SubcktDef {
  std::string name;
  std::vector<std::string> ports;
  std::vector<Element> body;
  std::map<std::string, ModelCard> local_models;  // keyed by folded name
};

struct SourceSpan {
  int line = 0;
  int col = 0;
};

struct Netlist {
  std::string title;
  std::vector<Element> elements;  // top level, document order
  std::map<std::string, ModelCard> models;    // keyed by folded name
  std::map<std::string, SubcktDef> subckts;   // keyed by folded name
  // Scope-qualified element name ("R1", "singlestageopamp.m1") -> location.
  std::map<std::string, SourceSpan> source_spans;
};

struct ParseResult {
  Netlist netlist;
  std::vector<Diagnostic> diagnostics;

  /// True when no error-severity diagnostic was recorded.
  bool syntax_ok() const;
  /// First error-severity diagnostic formatted "line L: message", empty if none.
  std::string first_error() const;
};

/// Total: malformed input yields diagnostics, never an exception or abort.
ParseResult parse_netlist(std::string_view text);

/// Subcircuit-expanded device list with an interned node table.
struct FlatCircuit {
  std::vector<Element> devices;  // hierarchical names ("x1.m1")
  std::vector<std::string> node_names;  // index -> name; "0" at index 0 when present
  std::map<std::string, int> node_index;  // folded name -> index
  std::map<std::string, ModelCard> models;  // folded name -> card

  int node_count() const { return static_cast<int>(node_names.size()); }
  int device_count() const { return static_cast<int>(devices.size()); }
  /// -1 when the node name is unknown.
  int node_id(std::string_view name) const;
  bool has_ground() const;
};

enum class FlattenErrorKind { UnresolvedSubckt, Recursion, PortArityMismatch };

class FlattenError : public std::runtime_error {
 public:
  FlattenError(FlattenErrorKind kind, const std::string& subject, const std::string& what)
      : std::runtime_error(what), kind(kind), subject(subject) {}
  FlattenErrorKind kind;
  std::string subject;
};

/// Expands every X instance depth-first in document order. Internal nodes are
/// renamed "x1.node"; ports are substituted with the instance connections;
/// ground "0" is global and never renamed.
FlatCircuit flatten(const Netlist& netlist);

/// Canonical deck text: title, models, subckts, elements, one per line,
/// values in scientific notation. parse(emit(x)) == canonicalize(x).
std::string emit(const Netlist& netlist);

/// Structural equality ignoring source spans and Value.raw; identifier
/// comparison is case-insensitive.
bool ast_equal(const Netlist& a, const Netlist& b);

std::string diagnostics_to_json(const std::vector<Diagnostic>& diags);

}  // namespace menter
