#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ferro/driver.hpp"

namespace ferro {

// Flat sectioned key-value configuration:
//
//   [mesh]
//   nx = 16
//   ny = 16
//   ...
//
// '#' starts a comment. Unknown sections and keys are rejected, values are
// validated when the configuration is realized into a Problem.
struct ParsedConfig {
  std::map<std::string, std::map<std::string, std::string>> sections;

  const std::string* find(const std::string& section, const std::string& key) const {
    auto s = sections.find(section);
    if (s == sections.end()) return nullptr;
    auto k = s->second.find(key);
    return k == s->second.end() ? nullptr : &k->second;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline const std::map<std::string, std::set<std::string>>& config_schema() {
  static const std::map<std::string, std::set<std::string>> schema = {
      {"mesh", {"nx", "ny", "x0", "y0", "x1", "y1", "import"}},
      {"bc", {"u", "phi", "p"}},
      {"material", {"*"}},  // name plus model parameters, validated by the factory
      {"loads", {"f_sigma", "f_D", "f_P", "t_sigma", "t_D", "t_P"}},
      {"time", {"T", "dt0", "dt_min", "dt_max", "blowup_threshold"}},
      {"picard", {"enabled", "tol", "max_iters"}},
      {"output", {"dir", "cadence", "checkpoint", "snapshots"}},
      {"initial", {"p"}},
      {"checks", {"enabled"}},
  };
  return schema;
}

inline void check_known(const std::string& section, const std::string& key, int line_no) {
  const auto& schema = config_schema();
  auto it = schema.find(section);
  if (it == schema.end())
    throw config_error("config line " + std::to_string(line_no) + ": unknown section [" + section +
                       "]");
  if (!it->second.count("*") && !it->second.count(key))
    throw config_error("config line " + std::to_string(line_no) + ": unknown key '" + key +
                       "' in section [" + section + "]");
}

inline double to_double(const std::string& section, const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != v.size())
    throw config_error("config: " + section + "." + key + " expects a number, got '" + v + "'");
  return out;
}

inline int to_int(const std::string& section, const std::string& key, const std::string& v) {
  const double d = to_double(section, key, v);
  const int i = static_cast<int>(d);
  if (static_cast<double>(i) != d)
    throw config_error("config: " + section + "." + key + " expects an integer, got '" + v + "'");
  return i;
}

inline bool to_bool(const std::string& section, const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw config_error("config: " + section + "." + key + " expects true/false, got '" + v + "'");
}

inline std::vector<std::string> split_tokens(const std::string& v) {
  std::istringstream is(v);
  std::vector<std::string> out;
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

}  // namespace detail

inline ParsedConfig parse_config_text(const std::string& text) {
  ParsedConfig cfg;
  std::istringstream is(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto comment = line.find('#');
    if (comment != std::string::npos) line.erase(comment);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw config_error("config line " + std::to_string(line_no) + ": malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (!detail::config_schema().count(section))
        throw config_error("config line " + std::to_string(line_no) + ": unknown section [" +
                           section + "]");
      cfg.sections[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw config_error("config line " + std::to_string(line_no) + ": expected key = value");
    if (section.empty())
      throw config_error("config line " + std::to_string(line_no) + ": key outside any section");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw config_error("config line " + std::to_string(line_no) + ": empty key or value");
    detail::check_known(section, key, line_no);
    if (cfg.sections[section].count(key))
      throw config_error("config line " + std::to_string(line_no) + ": duplicate key '" + key +
                         "'");
    cfg.sections[section][key] = value;
  }
  return cfg;
}

// Overrides come as "section.key=value" and must name known keys.
inline void apply_overrides(ParsedConfig& cfg, const std::vector<std::string>& overrides) {
  for (const std::string& ov : overrides) {
    const auto eq = ov.find('=');
    const auto dot = ov.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
      throw config_error("override '" + ov + "' must look like section.key=value");
    const std::string section = detail::trim(ov.substr(0, dot));
    const std::string key = detail::trim(ov.substr(dot + 1, eq - dot - 1));
    const std::string value = detail::trim(ov.substr(eq + 1));
    detail::check_known(section, key, 0);
    cfg.sections[section][key] = value;
  }
}

// FNV-1a over the canonical serialized form; identifies the configuration a
// checkpoint belongs to.
inline std::string config_hash(const ParsedConfig& cfg) {
  std::uint64_t h = 1469598103934665603ull;
  auto feed = [&](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
  };
  for (const auto& [section, keys] : cfg.sections)
    for (const auto& [key, value] : keys) {
      feed(section);
      feed(".");
      feed(key);
      feed("=");
      feed(value);
      feed("\n");
    }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct OutputSettings {
  std::string dir = "out";
  int cadence = 1;
  std::string checkpoint_path;  // empty disables checkpoint writing
  bool write_snapshots = true;
};

struct SimulationSetup {
  Problem problem;
  DriverParams params;
  OutputSettings output;
  std::string hash;
};

namespace detail {

inline LoadSet::ScalarMap make_scalar_load(const std::string& section, const std::string& key,
                                           const std::string& value) {
  const auto tok = split_tokens(value);
  if (tok.empty()) throw config_error("config: empty load spec for " + section + "." + key);
  if (tok[0] == "zero" && tok.size() == 1) return [](double, const Vec2&) { return 0.0; };
  if (tok[0] == "constant" && tok.size() == 2) {
    const double c = to_double(section, key, tok[1]);
    return [c](double, const Vec2&) { return c; };
  }
  if (tok[0] == "sine_x" && tok.size() == 3) {
    const double amp = to_double(section, key, tok[1]);
    const double k = to_double(section, key, tok[2]);
    return [amp, k](double, const Vec2& x) { return amp * std::sin(k * std::numbers::pi * x.x()); };
  }
  if (tok[0] == "ramp_t" && tok.size() == 2) {
    const double rate = to_double(section, key, tok[1]);
    return [rate](double t, const Vec2&) { return rate * t; };
  }
  throw config_error("config: " + section + "." + key + ": unknown scalar load preset '" + value +
                     "' (zero | constant c | sine_x amp k | ramp_t rate)");
}

inline LoadSet::VectorMap make_vector_load(const std::string& section, const std::string& key,
                                           const std::string& value) {
  const auto tok = split_tokens(value);
  if (tok.empty()) throw config_error("config: empty load spec for " + section + "." + key);
  if (tok[0] == "zero" && tok.size() == 1) return [](double, const Vec2&) { return Vec2::Zero(); };
  if (tok[0] == "constant" && tok.size() == 3) {
    const Vec2 c(to_double(section, key, tok[1]), to_double(section, key, tok[2]));
    return [c](double, const Vec2&) { return c; };
  }
  if (tok[0] == "sine_x" && tok.size() == 3) {
    const double amp = to_double(section, key, tok[1]);
    const double k = to_double(section, key, tok[2]);
    return [amp, k](double, const Vec2& x) {
      return Vec2(amp * std::sin(k * std::numbers::pi * x.x()), 0.0);
    };
  }
  if (tok[0] == "ramp_t" && tok.size() == 4) {
    const double rate = to_double(section, key, tok[1]);
    const Vec2 dir(to_double(section, key, tok[2]), to_double(section, key, tok[3]));
    return [rate, dir](double t, const Vec2&) { return Vec2(rate * t * dir); };
  }
  throw config_error("config: " + section + "." + key + ": unknown vector load preset '" + value +
                     "' (zero | constant cx cy | sine_x amp k | ramp_t rate dx dy)");
}

inline BcType parse_bc(const std::string& word, const std::string& field) {
  if (word == "dirichlet") return BcType::dirichlet;
  if (word == "neumann") return BcType::neumann;
  throw config_error("config: bc." + field + ": expected dirichlet or neumann, got '" + word + "'");
}

// "dirichlet", "neumann", or per-side "left:... right:... bottom:... top:...".
inline std::function<BcType(const Vec2&)> make_side_spec(const std::string& field,
                                                         const std::string& value,
                                                         const Rect& rect) {
  const auto tok = split_tokens(value);
  if (tok.size() == 1) {
    const BcType t = parse_bc(tok[0], field);
    return [t](const Vec2&) { return t; };
  }
  std::map<std::string, BcType> sides;
  for (const std::string& item : tok) {
    const auto colon = item.find(':');
    if (colon == std::string::npos)
      throw config_error("config: bc." + field + ": expected side:type, got '" + item + "'");
    const std::string side = item.substr(0, colon);
    if (side != "left" && side != "right" && side != "bottom" && side != "top")
      throw config_error("config: bc." + field + ": unknown side '" + side + "'");
    sides[side] = parse_bc(item.substr(colon + 1), field);
  }
  for (const char* side : {"left", "right", "bottom", "top"})
    if (!sides.count(side))
      throw config_error("config: bc." + field + ": per-side spec must cover " + side);
  const double tol_x = 1e-12 * std::max(1.0, std::abs(rect.width()));
  const double tol_y = 1e-12 * std::max(1.0, std::abs(rect.height()));
  return [=](const Vec2& mid) {
    if (mid.x() < rect.x0 + tol_x) return sides.at("left");
    if (mid.x() > rect.x1 - tol_x) return sides.at("right");
    if (mid.y() < rect.y0 + tol_y) return sides.at("bottom");
    return sides.at("top");
  };
}

}  // namespace detail

// Turn a parsed configuration into a runnable problem. Defaults: 8x8 unit
// square, all-Dirichlet u and phi, pure-Neumann polarization, lame_laplace,
// zero loads, zero initial polarization.
inline SimulationSetup realize_config(const ParsedConfig& cfg) {
  SimulationSetup setup;
  setup.hash = config_hash(cfg);

  auto get = [&](const std::string& section, const std::string& key,
                 const std::string& fallback) {
    const std::string* v = cfg.find(section, key);
    return v ? *v : fallback;
  };

  // mesh
  Rect rect;
  rect.x0 = detail::to_double("mesh", "x0", get("mesh", "x0", "0"));
  rect.y0 = detail::to_double("mesh", "y0", get("mesh", "y0", "0"));
  rect.x1 = detail::to_double("mesh", "x1", get("mesh", "x1", "1"));
  rect.y1 = detail::to_double("mesh", "y1", get("mesh", "y1", "1"));
  if (const std::string* import_path = cfg.find("mesh", "import")) {
    setup.problem.mesh = read_mesh_file(*import_path);
  } else {
    setup.problem.mesh = build_structured_mesh(detail::to_int("mesh", "nx", get("mesh", "nx", "8")),
                                               detail::to_int("mesh", "ny", get("mesh", "ny", "8")),
                                               rect);
  }

  // boundary partition
  const auto u_spec = detail::make_side_spec("u", get("bc", "u", "dirichlet"), rect);
  const auto phi_spec = detail::make_side_spec("phi", get("bc", "phi", "dirichlet"), rect);
  const auto p_spec = detail::make_side_spec("p", get("bc", "p", "neumann"), rect);
  setup.problem.partition = tag_boundary(setup.problem.mesh, [&](Field f, const Vec2& mid) {
    switch (f) {
      case Field::displacement: return u_spec(mid);
      case Field::potential: return phi_spec(mid);
      default: return p_spec(mid);
    }
  });

  // material
  std::string material_name = "lame_laplace";
  ParamMap material_params;
  if (auto s = cfg.sections.find("material"); s != cfg.sections.end()) {
    for (const auto& [key, value] : s->second) {
      if (key == "name")
        material_name = value;
      else
        material_params[key] = detail::to_double("material", key, value);
    }
  }
  setup.problem.model = make_material(material_name, material_params);

  // loads
  LoadSet loads = LoadSet::zero();
  loads.body_force = detail::make_vector_load("loads", "f_sigma", get("loads", "f_sigma", "zero"));
  loads.volume_charge = detail::make_scalar_load("loads", "f_D", get("loads", "f_D", "zero"));
  loads.polar_force = detail::make_vector_load("loads", "f_P", get("loads", "f_P", "zero"));
  loads.traction = detail::make_vector_load("loads", "t_sigma", get("loads", "t_sigma", "zero"));
  loads.surface_charge = detail::make_scalar_load("loads", "t_D", get("loads", "t_D", "zero"));
  loads.polar_flux = detail::make_vector_load("loads", "t_P", get("loads", "t_P", "zero"));
  setup.problem.loads = loads;

  // initial polarization
  const int n = setup.problem.mesh.n_vertices();
  setup.problem.p0 = VecX::Zero(2 * n);
  const auto init_tok = detail::split_tokens(get("initial", "p", "constant 0 0"));
  if (init_tok.size() == 3 && init_tok[0] == "constant") {
    const Vec2 c(detail::to_double("initial", "p", init_tok[1]),
                 detail::to_double("initial", "p", init_tok[2]));
    for (int i = 0; i < n; ++i) set_node_vec2(setup.problem.p0, i, c);
  } else if (init_tok.size() == 3 && init_tok[0] == "mode") {
    const double amp = detail::to_double("initial", "p", init_tok[1]);
    const double k = detail::to_double("initial", "p", init_tok[2]);
    for (int i = 0; i < n; ++i) {
      const Vec2& x = setup.problem.mesh.vertices[i];
      const double s = amp * std::sin(k * std::numbers::pi * (x.x() - rect.x0) / rect.width()) *
                       std::sin(k * std::numbers::pi * (x.y() - rect.y0) / rect.height());
      set_node_vec2(setup.problem.p0, i, Vec2(s, s));
    }
  } else {
    throw config_error("config: initial.p: expected 'constant px py' or 'mode amp k'");
  }

  // time stepping and run controls
  setup.params.time.t_end = detail::to_double("time", "T", get("time", "T", "1"));
  setup.params.time.dt0 = detail::to_double("time", "dt0", get("time", "dt0", "1e-3"));
  setup.params.time.dt_min = detail::to_double("time", "dt_min", get("time", "dt_min", "1e-8"));
  setup.params.time.dt_max = detail::to_double("time", "dt_max", get("time", "dt_max", "1e-1"));
  setup.params.blowup_norm_threshold =
      detail::to_double("time", "blowup_threshold", get("time", "blowup_threshold", "1e3"));
  setup.params.picard.enabled = detail::to_bool("picard", "enabled", get("picard", "enabled", "true"));
  setup.params.picard.tol = detail::to_double("picard", "tol", get("picard", "tol", "1e-10"));
  setup.params.picard.max_iters =
      detail::to_int("picard", "max_iters", get("picard", "max_iters", "25"));
  setup.params.preflight_checks = detail::to_bool("checks", "enabled", get("checks", "enabled", "true"));

  // output
  setup.output.dir = get("output", "dir", "out");
  setup.output.cadence = detail::to_int("output", "cadence", get("output", "cadence", "1"));
  setup.output.checkpoint_path = get("output", "checkpoint", "");
  setup.output.write_snapshots = detail::to_bool("output", "snapshots", get("output", "snapshots", "true"));
  setup.params.output_cadence = setup.output.cadence;

  setup.params.validate();
  return setup;
}

inline ParsedConfig load_config_file(const std::string& path,
                                     const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  ParsedConfig cfg = parse_config_text(buf.str());
  apply_overrides(cfg, overrides);
  return cfg;
}

}  // namespace ferro
