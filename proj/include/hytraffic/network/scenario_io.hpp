/// @file scenario_io.hpp
/// @brief Scenario file set: parsing, validation and canonical serialization.
///
/// A scenario is split over several XML files:
///   scenario.xml            global parameters, clusters, references to the two below
///   infrastructure.xml      nodes, turn maps, roads and signs
///   microscopicLevel.xml    input points (each with a generation and a rhythm file) and sinks
///   <generation file>       vehicle mix and driver-parameter distributions of one input point
///   <rhythm file>           flow profile or event script of one input point
/// The schema is documented in docs/FORMATS.md.
#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "../engine/model.hpp"
#include "../error.hpp"
#include "routing.hpp"
#include "validate.hpp"

namespace hytraffic {

namespace scenario_detail {

namespace pt = boost::property_tree;
namespace fs = std::filesystem;

inline std::string format_number(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

// Read access to one element, with the file it came from for diagnostics.
class Element {
public:
  Element(const pt::ptree& tree, std::string tag, const std::string& file)
      : m_tree(&tree), m_tag(std::move(tag)), m_file(&file) {}

  const std::string& file() const { return *m_file; }
  const std::string& tag() const { return m_tag; }

  bool has(const std::string& attr) const { return attrs() && attrs()->count(attr); }

  std::string str(const std::string& attr) const {
    if (!has(attr)) throw SchemaViolation(file(), m_tag + "@" + attr, "missing attribute");
    return attrs()->get<std::string>(attr);
  }
  std::string str(const std::string& attr, const std::string& fallback) const {
    return has(attr) ? str(attr) : fallback;
  }

  double num(const std::string& attr) const {
    const std::string s = str(attr);
    if (s == "inf") return kInf;
    double x = 0.0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), x);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(x))
      throw SchemaViolation(file(), m_tag + "@" + attr, "'" + s + "' is not a number");
    return x;
  }
  double num(const std::string& attr, double fallback) const { return has(attr) ? num(attr) : fallback; }

  long integer(const std::string& attr) const {
    const std::string s = str(attr);
    long x = 0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), x);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size())
      throw SchemaViolation(file(), m_tag + "@" + attr, "'" + s + "' is not an integer");
    return x;
  }
  long integer(const std::string& attr, long fallback) const { return has(attr) ? integer(attr) : fallback; }

  bool flag(const std::string& attr, bool fallback) const {
    if (!has(attr)) return fallback;
    const std::string s = str(attr);
    if (s == "true") return true;
    if (s == "false") return false;
    throw SchemaViolation(file(), m_tag + "@" + attr, "expected true or false");
  }

  std::vector<int> lanes(const std::string& attr) const {
    std::vector<int> out;
    std::istringstream in(str(attr));
    std::string tok;
    while (in >> tok) {
      int x = 0;
      auto r = std::from_chars(tok.data(), tok.data() + tok.size(), x);
      if (r.ec != std::errc() || r.ptr != tok.data() + tok.size())
        throw SchemaViolation(file(), m_tag + "@" + attr, "'" + tok + "' is not a lane index");
      out.push_back(x);
    }
    if (out.empty()) throw SchemaViolation(file(), m_tag + "@" + attr, "empty lane list");
    return out;
  }

  std::vector<Element> children(const std::string& tag) const {
    std::vector<Element> out;
    for (const auto& [k, v] : *m_tree)
      if (k == tag) out.emplace_back(v, k, *m_file);
    return out;
  }

  std::optional<Element> child(const std::string& tag) const {
    auto all = children(tag);
    if (all.size() > 1) throw SchemaViolation(file(), m_tag + "/" + tag, "element appears more than once");
    if (all.empty()) return std::nullopt;
    return all.front();
  }

  Element required(const std::string& tag) const {
    auto c = child(tag);
    if (!c) throw SchemaViolation(file(), m_tag + "/" + tag, "missing element");
    return *c;
  }

  /// Rejects unknown attributes and child elements.
  void allow(std::initializer_list<const char*> attributes, std::initializer_list<const char*> elements = {}) const {
    const std::set<std::string> a(attributes.begin(), attributes.end());
    const std::set<std::string> e(elements.begin(), elements.end());
    if (const auto* at = attrs())
      for (const auto& [k, _] : *at)
        if (!a.count(k)) throw SchemaViolation(file(), m_tag + "@" + k, "unknown attribute");
    for (const auto& [k, _] : *m_tree) {
      if (k == "<xmlattr>" || k == "<xmlcomment>") continue;
      if (!e.count(k)) throw SchemaViolation(file(), m_tag + "/" + k, "unknown element");
    }
  }

private:
  const pt::ptree* attrs() const {
    auto it = m_tree->find("<xmlattr>");
    return it == m_tree->not_found() ? nullptr : &it->second;
  }

  const pt::ptree* m_tree;
  std::string m_tag;
  const std::string* m_file;
};

// Loads `path` and returns the tree; the root element must be `root`.
inline pt::ptree load(const fs::path& path, const std::string& root) {
  const std::string name = path.string();
  if (!fs::is_regular_file(path)) throw FileNotFound(name);
  std::ifstream in(path);
  if (!in) throw FileNotFound(name);
  pt::ptree tree;
  try {
    pt::read_xml(in, tree, pt::xml_parser::trim_whitespace | pt::xml_parser::no_comments);
  } catch (const pt::xml_parser_error& e) {
    throw SyntaxError(name, static_cast<long>(e.line()), e.message());
  }
  std::size_t roots = 0;
  for (const auto& [k, _] : tree)
    if (k != "<xmlcomment>") ++roots;
  if (roots != 1 || tree.begin()->first != root)
    throw SchemaViolation(name, root, "root element must be <" + root + ">");
  return tree;
}

inline Distribution read_distribution(const Element& e) {
  const std::string kind = e.str("distribution");
  if (kind == "constant") {
    e.allow({"name", "distribution", "value"});
    return Distribution::constant(e.num("value"));
  }
  if (kind == "uniform") {
    e.allow({"name", "distribution", "low", "high"});
    const double lo = e.num("low"), hi = e.num("high");
    if (!(lo <= hi)) throw SchemaViolation(e.file(), "param@low", "low exceeds high");
    return Distribution::uniform(lo, hi);
  }
  if (kind == "normal") {
    e.allow({"name", "distribution", "mean", "sd"});
    const double sd = e.num("sd");
    if (sd < 0.0) throw SchemaViolation(e.file(), "param@sd", "negative standard deviation");
    return Distribution::normal(e.num("mean"), sd);
  }
  throw SchemaViolation(e.file(), "param@distribution", "unknown distribution '" + kind + "'");
}

inline Population read_population(const Element& e) {
  e.allow({"length", "insertion_speed"}, {"param"});
  Population p;
  p.length = e.num("length", p.length);
  p.insertion_speed = e.num("insertion_speed", p.insertion_speed);
  if (!(p.length > 0.0)) throw SchemaViolation(e.file(), e.tag() + "@length", "must be > 0");
  if (!(p.insertion_speed >= 0.0)) throw SchemaViolation(e.file(), e.tag() + "@insertion_speed", "must be >= 0");
  const auto& names = Population::field_names();
  for (const auto& c : e.children("param")) {
    const std::string name = c.str("name");
    if (std::find(names.begin(), names.end(), name) == names.end())
      throw SchemaViolation(e.file(), "param@name", "unknown driver parameter '" + name + "'");
    if (p.params.count(name)) throw SchemaViolation(e.file(), "param@name", "'" + name + "' given twice");
    p.params[name] = read_distribution(c);
  }
  return p;
}

inline DriverParams read_driver(const Element& e) {
  DriverParams p;
  p.v0 = e.num("v0", p.v0);
  p.T = e.num("T", p.T);
  p.a_max = e.num("a_max", p.a_max);
  p.b = e.num("b", p.b);
  p.delta = e.num("delta", p.delta);
  p.s0 = e.num("s0", p.s0);
  p.p = e.num("p", p.p);
  p.da_th = e.num("da_th", p.da_th);
  p.b_safe = e.num("b_safe", p.b_safe);
  if (auto f = p.invalid_field(); !f.empty()) throw SchemaViolation(e.file(), e.tag() + "@" + f, "invalid driver parameter");
  return p;
}

inline Rhythm read_rhythm(const Element& e) {
  Rhythm r;
  const std::string kind = e.str("kind");
  if (kind == "flow") {
    e.allow({"kind", "poisson"}, {"segment"});
    r.kind = Rhythm::Kind::Flow;
    r.poisson = e.flag("poisson", false);
    for (const auto& s : e.children("segment")) {
      s.allow({"start", "flow"});
      FlowSegment seg{s.num("start"), s.num("flow")};
      if (seg.flow < 0.0) throw SchemaViolation(e.file(), "segment@flow", "flow must be >= 0");
      if (!r.profile.empty() && seg.start <= r.profile.back().start)
        throw SchemaViolation(e.file(), "segment@start", "segments must be in increasing start order");
      r.profile.push_back(seg);
    }
  } else if (kind == "script") {
    e.allow({"kind"}, {"event"});
    r.kind = Rhythm::Kind::Script;
    for (const auto& v : e.children("event")) {
      v.allow({"time", "lane", "speed", "length", "v0", "T", "a_max", "b", "delta", "s0", "p", "da_th", "b_safe"});
      ScriptedEvent ev;
      ev.time = v.num("time");
      ev.lane = static_cast<int>(v.integer("lane"));
      ev.speed = v.num("speed");
      ev.length = v.num("length", ev.length);
      ev.params = read_driver(v);
      if (!r.events.empty() && ev.time < r.events.back().time)
        throw SchemaViolation(e.file(), "event@time", "event times must be non-decreasing");
      if (ev.speed < 0.0 || !(ev.length > 0.0)) throw SchemaViolation(e.file(), "event", "negative speed or length");
      r.events.push_back(ev);
    }
  } else {
    throw SchemaViolation(e.file(), "rhythm@kind", "expected flow or script");
  }
  return r;
}

inline NodeKind read_node_kind(const Element& e) {
  const std::string k = e.str("kind");
  for (auto kind : {NodeKind::Crossroads, NodeKind::Roundabout, NodeKind::HighwayInsertion, NodeKind::HighwayExtraction})
    if (k == to_string(kind)) return kind;
  throw SchemaViolation(e.file(), "node@kind", "unknown node kind '" + k + "'");
}

inline SignKind read_sign_kind(const Element& e) {
  const std::string k = e.str("kind");
  for (auto kind : {SignKind::Stop, SignKind::SpeedLimit, SignKind::Yield})
    if (k == to_string(kind)) return kind;
  throw SchemaViolation(e.file(), "sign@kind", "unknown sign kind '" + k + "'");
}

inline std::string lane_list(const std::vector<int>& lanes) {
  std::string s;
  for (int l : lanes) s += (s.empty() ? "" : " ") + std::to_string(l);
  return s;
}

inline pt::ptree& put_attr(pt::ptree& node, const std::string& k, const std::string& v) {
  node.put("<xmlattr>." + k, v);
  return node;
}
inline pt::ptree& put_attr(pt::ptree& node, const std::string& k, double v) { return put_attr(node, k, format_number(v)); }
inline pt::ptree& put_attr(pt::ptree& node, const std::string& k, long v) { return put_attr(node, k, std::to_string(v)); }
inline pt::ptree& put_attr(pt::ptree& node, const std::string& k, int v) { return put_attr(node, k, std::to_string(v)); }
inline pt::ptree& put_attr(pt::ptree& node, const std::string& k, bool v) { return put_attr(node, k, std::string(v ? "true" : "false")); }
inline pt::ptree& put_attr(pt::ptree& node, const std::string& k, const char* v) { return put_attr(node, k, std::string(v)); }

inline std::string to_xml(const pt::ptree& tree) {
  std::ostringstream out;
  pt::write_xml(out, tree, pt::xml_writer_make_settings<std::string>(' ', 2));
  return out.str();
}

inline pt::ptree population_tree(const Population& p) {
  pt::ptree t;
  put_attr(t, "length", p.length);
  put_attr(t, "insertion_speed", p.insertion_speed);
  for (const auto& name : Population::field_names()) {
    auto it = p.params.find(name);
    if (it == p.params.end()) continue;
    pt::ptree c;
    put_attr(c, "name", name);
    const auto& d = it->second;
    switch (d.kind) {
      case Distribution::Kind::Constant:
        put_attr(c, "distribution", "constant");
        put_attr(c, "value", d.a);
        break;
      case Distribution::Kind::Uniform:
        put_attr(c, "distribution", "uniform");
        put_attr(c, "low", d.a);
        put_attr(c, "high", d.b);
        break;
      case Distribution::Kind::Normal:
        put_attr(c, "distribution", "normal");
        put_attr(c, "mean", d.a);
        put_attr(c, "sd", d.b);
        break;
    }
    t.add_child("param", c);
  }
  return t;
}

inline void put_driver(pt::ptree& t, const DriverParams& p) {
  put_attr(t, "v0", p.v0);
  put_attr(t, "T", p.T);
  put_attr(t, "a_max", p.a_max);
  put_attr(t, "b", p.b);
  put_attr(t, "delta", p.delta);
  put_attr(t, "s0", p.s0);
  put_attr(t, "p", p.p);
  put_attr(t, "da_th", p.da_th);
  put_attr(t, "b_safe", p.b_safe);
}

inline std::string generation_file_of(const GeneratorSpec& g) {
  return g.generation_file.empty() ? "generation_" + g.point.id + ".xml" : g.generation_file;
}
inline std::string rhythm_file_of(const GeneratorSpec& g) {
  return g.rhythm_file.empty() ? "rhythm_" + g.point.id + ".xml" : g.rhythm_file;
}

}  // namespace scenario_detail

/// Name of the main file inside a scenario directory.
inline constexpr const char* kScenarioMainFile = "scenario.xml";

/// Loads a scenario from its main file, or from a directory holding scenario.xml.
/// Every referenced file is loaded; a missing or malformed file, an unknown identifier
/// or an invalid value raises an error naming the file at fault.
inline ScenarioModel parse_scenario(const std::filesystem::path& root_path) {
  using namespace scenario_detail;
  fs::path root = root_path;
  if (fs::is_directory(root)) root /= kScenarioMainFile;
  const fs::path dir = root.parent_path();
  const std::string main_file = root.string();

  ScenarioModel m;
  const pt::ptree main_tree = load(root, "scenario");
  const Element s(main_tree.get_child("scenario"), "scenario", main_file);
  s.allow({"name", "time_step", "duration", "free_speed"},
          {"infrastructure", "level", "macro", "lod", "population", "clusters"});
  m.name = s.str("name", m.name);
  m.time_step = s.num("time_step");
  m.duration = s.num("duration");
  m.free_speed = s.num("free_speed", kInf);
  if (!(m.time_step > 0.0)) throw SchemaViolation(main_file, "scenario@time_step", "must be > 0");
  if (!(m.duration >= 0.0)) throw SchemaViolation(main_file, "scenario@duration", "must be >= 0");
  if (!(m.free_speed > 0.0)) throw SchemaViolation(main_file, "scenario@free_speed", "must be > 0");

  if (auto e = s.child("macro")) {
    e->allow({"dx", "v_f", "rho_jam", "q_max"});
    m.macro.dx = e->num("dx", m.macro.dx);
    m.macro.fd = FundamentalDiagram::triangular(e->num("v_f", m.macro.fd.v_f), e->num("rho_jam", m.macro.fd.rho_jam),
                                                e->num("q_max", m.macro.fd.q_max));
    if (!(m.macro.dx > 0.0)) throw SchemaViolation(main_file, "macro@dx", "must be > 0");
    if (auto f = m.macro.fd.invalid_field(); !f.empty()) throw SchemaViolation(main_file, "macro@" + f, "invalid fundamental diagram");
  }
  if (auto e = s.child("lod")) {
    e->allow({"enabled", "theta_down", "theta_up", "persistence", "min_cluster_length", "micro_vehicle_budget",
              "cooldown", "wall_clock_budget"});
    auto& p = m.lod;
    p.enabled = e->flag("enabled", p.enabled);
    p.theta_down = e->num("theta_down", p.theta_down);
    p.theta_up = e->num("theta_up", p.theta_up);
    p.persistence = static_cast<int>(e->integer("persistence", p.persistence));
    p.min_cluster_length = e->num("min_cluster_length", p.min_cluster_length);
    p.micro_vehicle_budget = e->integer("micro_vehicle_budget", p.micro_vehicle_budget);
    p.cooldown = e->integer("cooldown", p.cooldown);
    p.wall_clock_budget = e->num("wall_clock_budget", p.wall_clock_budget);
    if (auto f = p.invalid_field(); !f.empty()) throw SchemaViolation(main_file, "lod@" + f, "invalid policy value");
  }
  if (auto e = s.child("population")) m.population = read_population(*e);

  // Infrastructure.
  const auto infra_ref = s.required("infrastructure");
  infra_ref.allow({"ref"});
  m.infrastructure_file = infra_ref.str("ref");
  const std::string infra_file = (dir / m.infrastructure_file).string();
  const pt::ptree infra_tree = load(dir / m.infrastructure_file, "infrastructure");
  const Element infra(infra_tree.get_child("infrastructure"), "infrastructure", infra_file);
  infra.allow({}, {"node", "road"});
  std::vector<Node> nodes;
  std::vector<Road> roads;
  for (const auto& n : infra.children("node")) {
    n.allow({"id", "kind"}, {"turn"});
    Node node{n.str("id"), read_node_kind(n), {}};
    for (const auto& t : n.children("turn")) {
      t.allow({"from_road", "from_lane", "to_road", "to_lane"});
      node.turn_map.push_back({t.str("from_road"), static_cast<int>(t.integer("from_lane")), t.str("to_road"),
                               static_cast<int>(t.integer("to_lane"))});
    }
    nodes.push_back(std::move(node));
  }
  for (const auto& r : infra.children("road")) {
    r.allow({"id", "from", "to", "length", "lanes", "speed_limit"}, {"sign"});
    Road road{r.str("id"), r.str("from"), r.str("to"), r.num("length"), static_cast<int>(r.integer("lanes")),
              r.num("speed_limit"), {}};
    for (const auto& g : r.children("sign")) {
      g.allow({"kind", "position", "lanes", "value"});
      VerticalSign sign;
      sign.kind = read_sign_kind(g);
      sign.position = g.num("position");
      if (g.has("lanes")) sign.lanes = g.lanes("lanes");
      if (sign.kind == SignKind::SpeedLimit) sign.value = g.num("value");
      else if (g.has("value")) throw SchemaViolation(infra_file, "sign@value", "only speed_limit signs carry a value");
      road.signs.push_back(sign);
    }
    roads.push_back(std::move(road));
  }

  // Microscopic level: connectors, each input point with its own generation and rhythm files.
  const auto level_ref = s.required("level");
  level_ref.allow({"ref"});
  m.level_file = level_ref.str("ref");
  const std::string level_file = (dir / m.level_file).string();
  const pt::ptree level_tree = load(dir / m.level_file, "microscopicLevel");
  const Element level(level_tree.get_child("microscopicLevel"), "microscopicLevel", level_file);
  level.allow({}, {"input", "sink"});
  std::vector<InputPoint> inputs;
  std::vector<EndPoint> sinks;
  std::vector<std::pair<std::string, std::string>> gen_files;
  for (const auto& i : level.children("input")) {
    i.allow({"id", "road", "lanes", "destination", "generation", "rhythm"});
    InputPoint ip{i.str("id"), i.str("road"), i.lanes("lanes"), std::nullopt};
    if (i.has("destination")) ip.destination = i.str("destination");
    inputs.push_back(ip);
    gen_files.emplace_back(i.str("generation"), i.str("rhythm"));
  }
  for (const auto& k : level.children("sink")) {
    k.allow({"id", "node"});
    sinks.push_back({k.str("id"), k.str("node")});
  }

  // References are resolved before building the network so that each error names its file.
  std::set<std::string> node_ids, road_ids, sink_ids, input_ids;
  for (const auto& n : nodes)
    if (!node_ids.insert(n.id).second) throw SchemaViolation(infra_file, "node@id", "duplicate id '" + n.id + "'");
  for (const auto& r : roads) {
    if (!road_ids.insert(r.id).second) throw SchemaViolation(infra_file, "road@id", "duplicate id '" + r.id + "'");
    for (const auto& end : {r.from_node, r.to_node})
      if (!node_ids.count(end)) throw DanglingReference(infra_file, end);
  }
  for (const auto& n : nodes)
    for (const auto& t : n.turn_map)
      for (const auto& id : {t.from_road, t.to_road})
        if (!road_ids.count(id)) throw DanglingReference(infra_file, id);
  for (const auto& k : sinks) {
    if (!sink_ids.insert(k.id).second) throw SchemaViolation(level_file, "sink@id", "duplicate id '" + k.id + "'");
    if (!node_ids.count(k.node)) throw DanglingReference(level_file, k.node);
  }
  for (const auto& ip : inputs) {
    if (!input_ids.insert(ip.id).second) throw SchemaViolation(level_file, "input@id", "duplicate id '" + ip.id + "'");
    if (!road_ids.count(ip.road)) throw DanglingReference(level_file, ip.road);
    if (ip.destination && !sink_ids.count(*ip.destination)) throw DanglingReference(level_file, *ip.destination);
  }

  m.network = RoadNetwork(roads, nodes, inputs, sinks);
  for (const auto& v : validate_network(m.network)) {
    const bool level_issue = v.kind == ViolationKind::DanglingInputPoint || v.kind == ViolationKind::DanglingEndPoint;
    const std::string& f = level_issue ? level_file : infra_file;
    throw SchemaViolation(f, v.subject, std::string(to_string(v.kind)) + ": " + v.message);
  }

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    GeneratorSpec g;
    g.point = m.network.input_points()[k];
    g.generation_file = gen_files[k].first;
    g.rhythm_file = gen_files[k].second;
    const std::string gfile = (dir / g.generation_file).string();
    const pt::ptree gtree = load(dir / g.generation_file, "generation");
    g.population = read_population(Element(gtree.get_child("generation"), "generation", gfile));
    const std::string rfile = (dir / g.rhythm_file).string();
    const pt::ptree rtree = load(dir / g.rhythm_file, "rhythm");
    g.rhythm = read_rhythm(Element(rtree.get_child("rhythm"), "rhythm", rfile));
    const Road& road = m.network.road(g.point.road);
    for (const auto& ev : g.rhythm.events)
      if (ev.lane < 0 || ev.lane >= road.lane_count) throw SchemaViolation(rfile, "event@lane", "lane out of range");
    if (g.point.destination) {
      try {
        compute_route(m.network, g.point.road, *g.point.destination, m.free_speed);
      } catch (const Unreachable& e) {
        throw SchemaViolation(level_file, "input@destination", e.what());
      }
    }
    m.generators.push_back(std::move(g));
  }

  if (auto e = s.child("clusters")) {
    e->allow({}, {"cluster"});
    for (const auto& c : e->children("cluster")) {
      c.allow({"id", "representation", "density"}, {"piece"});
      ClusterSpec spec;
      spec.id = static_cast<ClusterId>(c.integer("id"));
      const std::string rep = c.str("representation");
      if (rep == "micro") spec.representation = Representation::Micro;
      else if (rep == "macro") spec.representation = Representation::Macro;
      else throw SchemaViolation(main_file, "cluster@representation", "expected micro or macro");
      spec.initial_density = c.num("density", 0.0);
      for (const auto& p : c.children("piece")) {
        p.allow({"road", "start", "end"});
        const std::string road = p.str("road");
        if (!m.network.find_road(road)) throw DanglingReference(main_file, road);
        spec.extent.push_back({road, p.num("start"), p.num("end")});
      }
      m.clusters.push_back(std::move(spec));
    }
    if (auto problems = partition_problems(m.network, m.clusters); !problems.empty())
      throw SchemaViolation(main_file, "clusters", problems.front());
  }
  return m;
}

/// Canonical text of every file of the scenario, keyed by file name relative to the
/// scenario directory. Parsing the result gives back an equal model.
inline std::map<std::string, std::string> serialize_scenario(const ScenarioModel& m) {
  using namespace scenario_detail;
  std::map<std::string, std::string> files;

  pt::ptree main;
  pt::ptree& s = main.add_child("scenario", pt::ptree{});
  put_attr(s, "name", m.name);
  put_attr(s, "time_step", m.time_step);
  put_attr(s, "duration", m.duration);
  if (!std::isinf(m.free_speed)) put_attr(s, "free_speed", m.free_speed);
  put_attr(s.add_child("infrastructure", pt::ptree{}), "ref", m.infrastructure_file);
  put_attr(s.add_child("level", pt::ptree{}), "ref", m.level_file);
  {
    pt::ptree& e = s.add_child("macro", pt::ptree{});
    put_attr(e, "dx", m.macro.dx);
    put_attr(e, "v_f", m.macro.fd.v_f);
    put_attr(e, "rho_jam", m.macro.fd.rho_jam);
    put_attr(e, "q_max", m.macro.fd.q_max);
  }
  {
    pt::ptree& e = s.add_child("lod", pt::ptree{});
    const auto& p = m.lod;
    put_attr(e, "enabled", p.enabled);
    put_attr(e, "theta_down", p.theta_down);
    put_attr(e, "theta_up", p.theta_up);
    put_attr(e, "persistence", p.persistence);
    put_attr(e, "min_cluster_length", p.min_cluster_length);
    put_attr(e, "micro_vehicle_budget", p.micro_vehicle_budget);
    put_attr(e, "cooldown", p.cooldown);
    put_attr(e, "wall_clock_budget", p.wall_clock_budget);
  }
  s.add_child("population", population_tree(m.population));
  if (!m.clusters.empty()) {
    pt::ptree& cs = s.add_child("clusters", pt::ptree{});
    for (const auto& c : m.clusters) {
      pt::ptree& e = cs.add_child("cluster", pt::ptree{});
      put_attr(e, "id", c.id);
      put_attr(e, "representation", to_string(c.representation));
      put_attr(e, "density", c.initial_density);
      for (const auto& p : c.extent) {
        pt::ptree& q = e.add_child("piece", pt::ptree{});
        put_attr(q, "road", p.road);
        put_attr(q, "start", p.start);
        put_attr(q, "end", p.end);
      }
    }
  }
  files[kScenarioMainFile] = to_xml(main);

  pt::ptree infra;
  pt::ptree& in = infra.add_child("infrastructure", pt::ptree{});
  for (const auto& n : m.network.nodes()) {
    pt::ptree& e = in.add_child("node", pt::ptree{});
    put_attr(e, "id", n.id);
    put_attr(e, "kind", to_string(n.kind));
    for (const auto& t : n.turn_map) {
      pt::ptree& q = e.add_child("turn", pt::ptree{});
      put_attr(q, "from_road", t.from_road);
      put_attr(q, "from_lane", t.from_lane);
      put_attr(q, "to_road", t.to_road);
      put_attr(q, "to_lane", t.to_lane);
    }
  }
  for (const auto& r : m.network.roads()) {
    pt::ptree& e = in.add_child("road", pt::ptree{});
    put_attr(e, "id", r.id);
    put_attr(e, "from", r.from_node);
    put_attr(e, "to", r.to_node);
    put_attr(e, "length", r.length);
    put_attr(e, "lanes", r.lane_count);
    put_attr(e, "speed_limit", r.speed_limit);
    for (const auto& g : r.signs) {
      pt::ptree& q = e.add_child("sign", pt::ptree{});
      put_attr(q, "kind", to_string(g.kind));
      put_attr(q, "position", g.position);
      if (!g.lanes.empty()) put_attr(q, "lanes", lane_list(g.lanes));
      if (g.kind == SignKind::SpeedLimit) put_attr(q, "value", g.value);
    }
  }
  files[m.infrastructure_file] = to_xml(infra);

  pt::ptree level;
  pt::ptree& lv = level.add_child("microscopicLevel", pt::ptree{});
  for (const auto& g : m.generators) {
    pt::ptree& e = lv.add_child("input", pt::ptree{});
    put_attr(e, "id", g.point.id);
    put_attr(e, "road", g.point.road);
    put_attr(e, "lanes", lane_list(g.point.lanes));
    if (g.point.destination) put_attr(e, "destination", *g.point.destination);
    put_attr(e, "generation", generation_file_of(g));
    put_attr(e, "rhythm", rhythm_file_of(g));

    pt::ptree gen;
    gen.add_child("generation", population_tree(g.population));
    files[generation_file_of(g)] = to_xml(gen);

    pt::ptree rh;
    pt::ptree& r = rh.add_child("rhythm", pt::ptree{});
    if (g.rhythm.kind == Rhythm::Kind::Flow) {
      put_attr(r, "kind", "flow");
      put_attr(r, "poisson", g.rhythm.poisson);
      for (const auto& seg : g.rhythm.profile) {
        pt::ptree& q = r.add_child("segment", pt::ptree{});
        put_attr(q, "start", seg.start);
        put_attr(q, "flow", seg.flow);
      }
    } else {
      put_attr(r, "kind", "script");
      for (const auto& ev : g.rhythm.events) {
        pt::ptree& q = r.add_child("event", pt::ptree{});
        put_attr(q, "time", ev.time);
        put_attr(q, "lane", ev.lane);
        put_attr(q, "speed", ev.speed);
        put_attr(q, "length", ev.length);
        put_driver(q, ev.params);
      }
    }
    files[rhythm_file_of(g)] = to_xml(rh);
  }
  for (const auto& k : m.network.end_points()) {
    pt::ptree& e = lv.add_child("sink", pt::ptree{});
    put_attr(e, "id", k.id);
    put_attr(e, "node", k.node);
  }
  files[m.level_file] = to_xml(level);
  return files;
}

/// Writes the canonical file set into `dir`, creating it if needed.
inline void write_scenario(const ScenarioModel& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, text] : serialize_scenario(m)) {
    std::ofstream out(dir / name, std::ios::binary);
    out << text;
    if (!out) throw Error("cannot write " + (dir / name).string());
  }
}

}  // namespace hytraffic
