#include "menter/netlist.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <set>

#include "json.hpp"
#include "menter/util.hpp"

namespace menter {

namespace {

constexpr const char* kSyntax = "syntax";
constexpr const char* kUnsupported = "unsupported-element";
constexpr const char* kUnknownDirective = "unknown-directive";
constexpr const char* kDuplicate = "duplicate-element";
constexpr const char* kModelCardCode = "model-card";
constexpr const char* kSubcktRef = "subckt-ref";
constexpr const char* kEmptyDeck = "empty-deck";

struct LogicalLine {
  std::string text;
  int line = 0;  // physical line number of the first segment
};

std::vector<LogicalLine> logical_lines(std::string_view text) {
  std::vector<LogicalLine> out;
  int lineno = 0;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t eol = text.find('\n', pos);
    std::string_view raw = (eol == std::string_view::npos)
                               ? text.substr(pos)
                               : text.substr(pos, eol - pos);
    ++lineno;
    std::string stripped = trim(raw);
    if (!stripped.empty() && stripped[0] != '*') {
      if (stripped[0] == '+' && !out.empty()) {
        out.back().text += " " + trim(stripped.substr(1));
      } else {
        out.push_back({stripped, lineno});
      }
    }
    if (eol == std::string_view::npos) break;
    pos = eol + 1;
  }
  return out;
}

struct Scope {
  SubcktDef def;
  std::set<std::string> names;  // folded element names in this scope
  int open_line = 0;
};

class Parser {
 public:
  explicit Parser(std::string_view text) : lines_(logical_lines(text)) {}

  ParseResult run() {
    if (lines_.empty()) {
      diag(0, 0, kEmptyDeck, "empty deck", Severity::Warning);
    }
    for (const LogicalLine& ll : lines_) {
      if (ended_) break;
      if (ll.text[0] == '.') {
        directive(ll);
      } else {
        element(ll);
      }
    }
    while (!stack_.empty()) {
      diag(stack_.back().open_line, 1, kSyntax,
           "unterminated .subckt " + stack_.back().def.name, Severity::Error);
      close_subckt();
    }
    check_subckt_refs();
    ParseResult result;
    result.netlist = std::move(netlist_);
    result.diagnostics = std::move(diags_);
    return result;
  }

 private:
  void diag(int line, int col, const std::string& code, const std::string& message,
            Severity sev) {
    diags_.push_back({line, col, code, message, sev});
  }

  bool in_subckt() const { return !stack_.empty(); }

  std::vector<Element>& current_elements() {
    return in_subckt() ? stack_.back().def.body : netlist_.elements;
  }

  std::set<std::string>& current_names() {
    return in_subckt() ? stack_.back().names : top_names_;
  }

  std::string scope_prefix() const {
    return in_subckt() ? fold(stack_.back().def.name) + "." : std::string();
  }

  void directive(const LogicalLine& ll) {
    auto tokens = split_ws(ll.text);
    std::string kw = fold(tokens[0]);
    if (kw == ".title") {
      size_t off = ll.text.find_first_not_of(" \t", tokens[0].size());
      netlist_.title = off == std::string::npos ? "" : trim(ll.text.substr(off));
    } else if (kw == ".model") {
      model_card(ll, tokens);
    } else if (kw == ".subckt") {
      open_subckt(ll, tokens);
    } else if (kw == ".ends") {
      if (!in_subckt()) {
        diag(ll.line, 1, kSyntax, ".ends without matching .subckt", Severity::Error);
        return;
      }
      if (tokens.size() > 1 && fold(tokens[1]) != fold(stack_.back().def.name)) {
        diag(ll.line, 1, kSyntax,
             ".ends name '" + tokens[1] + "' does not match .subckt '" +
                 stack_.back().def.name + "'",
             Severity::Warning);
      }
      close_subckt();
    } else if (kw == ".end") {
      ended_ = true;
    } else {
      diag(ll.line, 1, kUnknownDirective, "unknown directive '" + tokens[0] + "' ignored",
           Severity::Warning);
    }
  }

  void open_subckt(const LogicalLine& ll, const std::vector<std::string>& tokens) {
    if (tokens.size() < 2) {
      diag(ll.line, 1, kSyntax, ".subckt requires a name", Severity::Error);
      return;
    }
    Scope scope;
    scope.def.name = tokens[1];
    scope.open_line = ll.line;
    std::set<std::string> seen;
    for (size_t i = 2; i < tokens.size(); ++i) {
      if (!seen.insert(fold(tokens[i])).second) {
        diag(ll.line, 1, kSyntax,
             "duplicate port '" + tokens[i] + "' in .subckt " + tokens[1], Severity::Error);
        continue;
      }
      scope.def.ports.push_back(tokens[i]);
    }
    stack_.push_back(std::move(scope));
  }

  void close_subckt() {
    Scope scope = std::move(stack_.back());
    stack_.pop_back();
    std::string key = fold(scope.def.name);
    if (netlist_.subckts.count(key)) {
      diag(scope.open_line, 1, kDuplicate, "duplicate subckt '" + scope.def.name + "'",
           Severity::Error);
      return;
    }
    netlist_.subckts.emplace(key, std::move(scope.def));
  }

  void model_card(const LogicalLine& ll, const std::vector<std::string>& tokens) {
    if (tokens.size() < 3) {
      diag(ll.line, 1, kModelCardCode, ".model requires a name and a type", Severity::Error);
      return;
    }
    ModelCard card;
    card.name = tokens[1];
    std::string type = fold(tokens[2]);
    if (type == "nmos") {
      card.polarity = Polarity::Nmos;
    } else if (type == "pmos") {
      card.polarity = Polarity::Pmos;
    } else {
      diag(ll.line, 1, kModelCardCode,
           "unsupported model type '" + tokens[2] + "'; card ignored", Severity::Warning);
      return;
    }
    // Parameter list may be wrapped in parentheses; strip and re-split.
    std::string rest;
    for (size_t i = 3; i < tokens.size(); ++i) {
      rest += tokens[i];
      rest += ' ';
    }
    std::erase(rest, '(');
    std::erase(rest, ')');
    bool kp_seen = false;
    for (const std::string& kv : split_ws(rest)) {
      size_t eq = kv.find('=');
      if (eq == std::string::npos) {
        diag(ll.line, 1, kModelCardCode, "malformed model parameter '" + kv + "'",
             Severity::Error);
        continue;
      }
      std::string key = fold(kv.substr(0, eq));
      auto v = try_parse_value(kv.substr(eq + 1));
      if (!v) {
        diag(ll.line, 1, kModelCardCode, "bad value in model parameter '" + kv + "'",
             Severity::Error);
        continue;
      }
      if (key == "kp") {
        card.kp = v->magnitude;
        kp_seen = true;
      } else if (key == "vto") {
        card.vto = v->magnitude;
      } else if (key == "lambda") {
        card.lambda = v->magnitude;
      } else if (key == "level") {
        card.level = static_cast<int>(std::lround(v->magnitude));
        if (card.level != 1) {
          diag(ll.line, 1, kModelCardCode,
               "model '" + card.name + "' level " + std::to_string(card.level) +
                   " unsupported; square-law level 1 semantics apply",
               Severity::Warning);
        }
      } else {
        diag(ll.line, 1, kModelCardCode,
             "unknown model parameter '" + key + "' ignored", Severity::Warning);
      }
    }
    if (!kp_seen || card.kp <= 0.0) {
      diag(ll.line, 1, kModelCardCode, "model '" + card.name + "' requires kp > 0",
           Severity::Error);
    }
    auto& models = in_subckt() ? stack_.back().def.local_models : netlist_.models;
    std::string key = fold(card.name);
    if (models.count(key)) {
      diag(ll.line, 1, kDuplicate, "duplicate model '" + card.name + "'", Severity::Error);
      return;
    }
    models.emplace(key, std::move(card));
  }

  void element(const LogicalLine& ll) {
    auto tokens = split_ws(ll.text);
    const std::string& name = tokens[0];
    char letter = static_cast<char>(std::toupper(static_cast<unsigned char>(name[0])));
    Element e;
    e.name = name;
    switch (letter) {
      case 'R': e.kind = ElementKind::Resistor; break;
      case 'C': e.kind = ElementKind::Capacitor; break;
      case 'M': e.kind = ElementKind::Mosfet; break;
      case 'V': e.kind = ElementKind::VSource; break;
      case 'I': e.kind = ElementKind::ISource; break;
      case 'X': e.kind = ElementKind::SubcktInstance; break;
      default:
        diag(ll.line, 1, kUnsupported,
             "unsupported element '" + name + "' (letter '" + std::string(1, letter) +
                 "'); card ignored",
             Severity::Warning);
        return;
    }
    if (!current_names().insert(fold(name)).second) {
      diag(ll.line, 1, kDuplicate, "duplicate element name " + name, Severity::Error);
      return;
    }
    bool ok = false;
    switch (e.kind) {
      case ElementKind::Resistor:
      case ElementKind::Capacitor:
        ok = two_terminal(ll, tokens, e, /*allow_dc_keyword=*/false);
        break;
      case ElementKind::VSource:
      case ElementKind::ISource:
        ok = two_terminal(ll, tokens, e, /*allow_dc_keyword=*/true);
        break;
      case ElementKind::Mosfet:
        ok = mosfet(ll, tokens, e);
        break;
      case ElementKind::SubcktInstance:
        ok = instance(ll, tokens, e);
        break;
    }
    if (!ok) {
      current_names().erase(fold(name));
      return;
    }
    netlist_.source_spans[scope_prefix() + fold(name)] = {ll.line, 1};
    current_elements().push_back(std::move(e));
  }

  bool two_terminal(const LogicalLine& ll, const std::vector<std::string>& tokens, Element& e,
                    bool allow_dc_keyword) {
    size_t vi = 3;
    if (allow_dc_keyword && tokens.size() > 3 && fold(tokens[3]) == "dc") vi = 4;
    if (tokens.size() < vi + 1) {
      diag(ll.line, 1, kSyntax,
           "element " + e.name + " needs two nodes and a value", Severity::Error);
      return false;
    }
    if (tokens.size() > vi + 1) {
      diag(ll.line, 1, kSyntax,
           "element " + e.name + ": unexpected trailing tokens", Severity::Error);
      return false;
    }
    e.nodes = {tokens[1], tokens[2]};
    auto v = try_parse_value(tokens[vi]);
    if (!v) {
      diag(ll.line, 1, kSyntax,
           "element " + e.name + ": bad value token '" + tokens[vi] + "'", Severity::Error);
      return false;
    }
    e.value = *v;
    return true;
  }

  bool mosfet(const LogicalLine& ll, const std::vector<std::string>& tokens, Element& e) {
    if (tokens.size() < 6) {
      diag(ll.line, 1, kSyntax,
           "mosfet " + e.name + " needs drain gate source bulk and a model", Severity::Error);
      return false;
    }
    e.nodes = {tokens[1], tokens[2], tokens[3], tokens[4]};
    e.model_ref = tokens[5];
    for (size_t i = 6; i < tokens.size(); ++i) {
      size_t eq = tokens[i].find('=');
      if (eq == std::string::npos) {
        diag(ll.line, 1, kSyntax,
             "mosfet " + e.name + ": expected key=value, got '" + tokens[i] + "'",
             Severity::Error);
        return false;
      }
      auto v = try_parse_value(tokens[i].substr(eq + 1));
      if (!v) {
        diag(ll.line, 1, kSyntax,
             "mosfet " + e.name + ": bad value in '" + tokens[i] + "'", Severity::Error);
        return false;
      }
      e.params[fold(tokens[i].substr(0, eq))] = *v;
    }
    return true;
  }

  bool instance(const LogicalLine& ll, const std::vector<std::string>& tokens, Element& e) {
    if (tokens.size() < 2) {
      diag(ll.line, 1, kSyntax, "instance " + e.name + " needs a subckt name",
           Severity::Error);
      return false;
    }
    e.nodes.assign(tokens.begin() + 1, tokens.end() - 1);
    e.model_ref = tokens.back();
    return true;
  }

  void check_subckt_refs() {
    auto check = [&](const std::vector<Element>& elems, const std::string& scope) {
      for (const Element& e : elems) {
        if (e.kind != ElementKind::SubcktInstance) continue;
        auto it = netlist_.subckts.find(fold(*e.model_ref));
        auto span = netlist_.source_spans.find(scope + fold(e.name));
        int line = span == netlist_.source_spans.end() ? 0 : span->second.line;
        if (it == netlist_.subckts.end()) {
          diag(line, 1, kSubcktRef,
               "instance " + e.name + " references undefined subckt '" + *e.model_ref + "'",
               Severity::Error);
        } else if (it->second.ports.size() != e.nodes.size()) {
          diag(line, 1, kSubcktRef,
               "instance " + e.name + " wires " + std::to_string(e.nodes.size()) +
                   " nodes to subckt '" + it->second.name + "' with " +
                   std::to_string(it->second.ports.size()) + " ports",
               Severity::Error);
        }
      }
    };
    check(netlist_.elements, "");
    for (const auto& [key, def] : netlist_.subckts) check(def.body, key + ".");
  }

  std::vector<LogicalLine> lines_;
  Netlist netlist_;
  std::vector<Diagnostic> diags_;
  std::vector<Scope> stack_;
  std::set<std::string> top_names_;
  bool ended_ = false;
};

}  // namespace

std::optional<Value> try_parse_value(std::string_view token) {
  if (token.empty()) return std::nullopt;
  std::string buf(token);
  char* end = nullptr;
  errno = 0;
  double mag = std::strtod(buf.c_str(), &end);
  if (end == buf.c_str() || !std::isfinite(mag)) return std::nullopt;
  std::string tail = fold(end);
  if (!tail.empty()) {
    if (tail.rfind("meg", 0) == 0) {
      mag *= 1e6;  // longest match; plain "m" is milli
    } else {
      switch (tail[0]) {
        case 't': mag *= 1e12; break;
        case 'g': mag *= 1e9; break;
        case 'k': mag *= 1e3; break;
        case 'm': mag *= 1e-3; break;
        case 'u': mag *= 1e-6; break;
        case 'n': mag *= 1e-9; break;
        case 'p': mag *= 1e-12; break;
        case 'f': mag *= 1e-15; break;
        default: break;  // unit word such as "V" or "Ohm"
      }
    }
  }
  return Value{mag, std::string(token)};
}

Value parse_value(std::string_view token) {
  auto v = try_parse_value(token);
  if (!v) {
    throw ValueError("value token '" + std::string(token) + "' has no numeric prefix");
  }
  return *v;
}

char kind_letter(ElementKind k) {
  switch (k) {
    case ElementKind::Resistor: return 'R';
    case ElementKind::Capacitor: return 'C';
    case ElementKind::Mosfet: return 'M';
    case ElementKind::VSource: return 'V';
    case ElementKind::ISource: return 'I';
    case ElementKind::SubcktInstance: return 'X';
  }
  return '?';
}

bool ParseResult::syntax_ok() const {
  return std::none_of(diagnostics.begin(), diagnostics.end(),
                      [](const Diagnostic& d) { return d.severity == Severity::Error; });
}

std::string ParseResult::first_error() const {
  for (const Diagnostic& d : diagnostics) {
    if (d.severity == Severity::Error) {
      return "line " + std::to_string(d.line) + ": " + d.message;
    }
  }
  return "";
}

ParseResult parse_netlist(std::string_view text) { return Parser(text).run(); }

int FlatCircuit::node_id(std::string_view name) const {
  auto it = node_index.find(fold(name));
  return it == node_index.end() ? -1 : it->second;
}

bool FlatCircuit::has_ground() const { return node_index.count("0") != 0; }

namespace {

bool cards_equal(const ModelCard& a, const ModelCard& b) {
  return a.polarity == b.polarity && a.level == b.level && a.vto == b.vto && a.kp == b.kp &&
         a.lambda == b.lambda;
}

class Flattener {
 public:
  explicit Flattener(const Netlist& nl) : nl_(nl) { out_.models = nl.models; }

  FlatCircuit run() {
    expand(nl_.elements, "", {}, {});
    intern_nodes();
    return std::move(out_);
  }

 private:
  using StrMap = std::map<std::string, std::string>;

  void expand(const std::vector<Element>& elems, const std::string& prefix,
              const StrMap& port_map, const StrMap& model_map) {
    for (const Element& e : elems) {
      if (e.kind == ElementKind::SubcktInstance) {
        instance(e, prefix, port_map);
      } else {
        Element d = e;
        d.name = prefix + e.name;
        for (std::string& n : d.nodes) n = resolve_node(n, prefix, port_map);
        if (d.model_ref) {
          auto it = model_map.find(fold(*d.model_ref));
          if (it != model_map.end()) d.model_ref = it->second;
        }
        out_.devices.push_back(std::move(d));
      }
    }
  }

  void instance(const Element& e, const std::string& prefix, const StrMap& port_map) {
    auto it = nl_.subckts.find(fold(*e.model_ref));
    if (it == nl_.subckts.end()) {
      throw FlattenError(FlattenErrorKind::UnresolvedSubckt, e.name,
                         "instance " + prefix + e.name + " references undefined subckt '" +
                             *e.model_ref + "'");
    }
    const SubcktDef& def = it->second;
    if (std::find(stack_.begin(), stack_.end(), it->first) != stack_.end()) {
      throw FlattenError(FlattenErrorKind::Recursion, def.name,
                         "subckt '" + def.name + "' instantiates itself");
    }
    if (def.ports.size() != e.nodes.size()) {
      throw FlattenError(
          FlattenErrorKind::PortArityMismatch, e.name,
          "instance " + prefix + e.name + " wires " + std::to_string(e.nodes.size()) +
              " nodes to subckt '" + def.name + "' with " + std::to_string(def.ports.size()) +
              " ports");
    }
    std::string inner_prefix = prefix + e.name + ".";
    StrMap inner_ports;
    for (size_t i = 0; i < def.ports.size(); ++i) {
      inner_ports[fold(def.ports[i])] = resolve_node(e.nodes[i], prefix, port_map);
    }
    StrMap inner_models;
    for (const auto& [key, card] : def.local_models) {
      auto existing = out_.models.find(key);
      if (existing == out_.models.end()) {
        out_.models.emplace(key, card);
      } else if (!cards_equal(existing->second, card)) {
        std::string qualified = fold(inner_prefix) + key;
        ModelCard renamed = card;
        renamed.name = inner_prefix + card.name;
        out_.models.emplace(qualified, std::move(renamed));
        inner_models[key] = qualified;
      }
    }
    stack_.push_back(it->first);
    expand(def.body, inner_prefix, inner_ports, inner_models);
    stack_.pop_back();
  }

  std::string resolve_node(const std::string& n, const std::string& prefix,
                           const StrMap& port_map) {
    if (n == "0") return n;  // ground is global
    auto it = port_map.find(fold(n));
    if (it != port_map.end()) return it->second;
    return prefix + n;
  }

  void intern_nodes() {
    auto add = [&](const std::string& name) {
      std::string key = fold(name);
      if (!out_.node_index.count(key)) {
        out_.node_index[key] = static_cast<int>(out_.node_names.size());
        out_.node_names.push_back(name);
      }
    };
    // Ground claims index 0 when present; the rest intern in appearance order.
    for (const Element& d : out_.devices) {
      for (const std::string& n : d.nodes) {
        if (n == "0") {
          add("0");
          break;
        }
      }
      if (!out_.node_names.empty()) break;
    }
    for (const Element& d : out_.devices) {
      for (const std::string& n : d.nodes) add(n);
    }
  }

  const Netlist& nl_;
  FlatCircuit out_;
  std::vector<std::string> stack_;
};

}  // namespace

FlatCircuit flatten(const Netlist& netlist) { return Flattener(netlist).run(); }

namespace {

void emit_model(std::string& out, const ModelCard& card) {
  out += ".model " + card.name + (card.polarity == Polarity::Nmos ? " nmos" : " pmos");
  out += " (kp=" + format_magnitude(card.kp);
  if (card.lambda != 0.0) out += " lambda=" + format_magnitude(card.lambda);
  out += " level=" + std::to_string(card.level);
  out += " vto=" + format_magnitude(card.vto) + ")\n";
}

void emit_element(std::string& out, const Element& e) {
  out += e.name;
  for (const std::string& n : e.nodes) out += " " + n;
  switch (e.kind) {
    case ElementKind::Mosfet:
      out += " " + (e.model_ref ? *e.model_ref : std::string("?"));
      for (const auto& [k, v] : e.params) out += " " + k + "=" + format_magnitude(v.magnitude);
      break;
    case ElementKind::SubcktInstance:
      out += " " + (e.model_ref ? *e.model_ref : std::string("?"));
      break;
    default:
      out += " " + format_magnitude(e.value ? e.value->magnitude : 0.0);
      break;
  }
  out += "\n";
}

}  // namespace

std::string emit(const Netlist& netlist) {
  std::string out = ".title";
  if (!netlist.title.empty()) out += " " + netlist.title;
  out += "\n";
  for (const auto& [key, card] : netlist.models) emit_model(out, card);
  for (const auto& [key, def] : netlist.subckts) {
    out += ".subckt " + def.name;
    for (const std::string& p : def.ports) out += " " + p;
    out += "\n";
    for (const auto& [mk, card] : def.local_models) emit_model(out, card);
    for (const Element& e : def.body) emit_element(out, e);
    out += ".ends " + def.name + "\n";
  }
  for (const Element& e : netlist.elements) emit_element(out, e);
  out += ".end\n";
  return out;
}

namespace {

bool opt_name_equal(const std::optional<std::string>& a, const std::optional<std::string>& b) {
  if (a.has_value() != b.has_value()) return false;
  return !a || fold(*a) == fold(*b);
}

bool elements_equal(const Element& a, const Element& b) {
  if (a.kind != b.kind || fold(a.name) != fold(b.name)) return false;
  if (a.nodes.size() != b.nodes.size()) return false;
  for (size_t i = 0; i < a.nodes.size(); ++i) {
    if (fold(a.nodes[i]) != fold(b.nodes[i])) return false;
  }
  if (!opt_name_equal(a.model_ref, b.model_ref)) return false;
  if (a.value.has_value() != b.value.has_value()) return false;
  if (a.value && !(*a.value == *b.value)) return false;
  if (a.params.size() != b.params.size()) return false;
  for (auto ia = a.params.begin(), ib = b.params.begin(); ia != a.params.end(); ++ia, ++ib) {
    if (ia->first != ib->first || !(ia->second == ib->second)) return false;
  }
  return true;
}

bool bodies_equal(const std::vector<Element>& a, const std::vector<Element>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (!elements_equal(a[i], b[i])) return false;
  }
  return true;
}

bool model_maps_equal(const std::map<std::string, ModelCard>& a,
                      const std::map<std::string, ModelCard>& b) {
  if (a.size() != b.size()) return false;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first || !cards_equal(ia->second, ib->second)) return false;
  }
  return true;
}

}  // namespace

bool ast_equal(const Netlist& a, const Netlist& b) {
  if (a.title != b.title) return false;
  if (!bodies_equal(a.elements, b.elements)) return false;
  if (!model_maps_equal(a.models, b.models)) return false;
  if (a.subckts.size() != b.subckts.size()) return false;
  for (auto ia = a.subckts.begin(), ib = b.subckts.begin(); ia != a.subckts.end(); ++ia, ++ib) {
    if (ia->first != ib->first) return false;
    const SubcktDef& da = ia->second;
    const SubcktDef& db = ib->second;
    if (da.ports.size() != db.ports.size()) return false;
    for (size_t i = 0; i < da.ports.size(); ++i) {
      if (fold(da.ports[i]) != fold(db.ports[i])) return false;
    }
    if (!bodies_equal(da.body, db.body)) return false;
    if (!model_maps_equal(da.local_models, db.local_models)) return false;
  }
  return true;
}

std::string diagnostics_to_json(const std::vector<Diagnostic>& diags) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Diagnostic& d : diags) {
    arr.push_back({{"line", d.line},
                   {"col", d.col},
                   {"code", d.code},
                   {"message", d.message},
                   {"severity", d.severity == Severity::Error ? "error" : "warning"}});
  }
  return arr.dump();
}

}  // namespace menter
