#include "stochins/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace stochins {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct RawConfig {
  struct Entry {
    std::string value;
    int line = 0;
  };
  std::string filename;
  std::map<std::string, Entry> entries;  // "section.key"
  mutable std::map<std::string, bool> consumed;

  [[noreturn]] void fail(const std::string& where, int line,
                         const std::string& message) const {
    throw ConfigError(filename + ":" + std::to_string(line) + ": [" + where + "] " +
                      message);
  }

  const Entry* find(const std::string& key) const {
    auto it = entries.find(key);
    if (it == entries.end()) return nullptr;
    consumed[key] = true;
    return &it->second;
  }
};

RawConfig tokenize(const std::string& text, const std::string& filename) {
  RawConfig raw;
  raw.filename = filename;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError(filename + ":" + std::to_string(lineno) +
                          ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(filename + ":" + std::to_string(lineno) +
                        ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty())
      throw ConfigError(filename + ":" + std::to_string(lineno) +
                        ": key outside of any [section]");
    raw.entries[section + "." + key] = {value, lineno};
  }
  return raw;
}

double parse_double(const RawConfig& raw, const std::string& key,
                    const RawConfig::Entry& e) {
  try {
    std::size_t used = 0;
    const double v = std::stod(e.value, &used);
    if (used != e.value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    raw.fail(key, e.line, "expected a number, got '" + e.value + "'");
  }
}

struct Reader {
  const RawConfig& raw;

  void number(const std::string& key, double& out) const {
    if (const auto* e = raw.find(key)) out = parse_double(raw, key, *e);
  }
  void integer(const std::string& key, int& out) const {
    if (const auto* e = raw.find(key)) {
      const double v = parse_double(raw, key, *e);
      if (v != std::floor(v)) raw.fail(key, e->line, "expected an integer");
      out = static_cast<int>(v);
    }
  }
  void unsigned64(const std::string& key, std::uint64_t& out) const {
    if (const auto* e = raw.find(key)) {
      try {
        out = std::stoull(e->value);
      } catch (...) {
        raw.fail(key, e->line, "expected an unsigned integer");
      }
    }
  }
  void text(const std::string& key, std::string& out) const {
    if (const auto* e = raw.find(key)) out = e->value;
  }
  void boolean(const std::string& key, bool& out) const {
    if (const auto* e = raw.find(key)) {
      if (e->value == "true")
        out = true;
      else if (e->value == "false")
        out = false;
      else
        raw.fail(key, e->line, "expected true or false");
    }
  }
  void pair(const std::string& key, double& lo, double& hi) const {
    if (const auto* e = raw.find(key)) {
      std::istringstream ss(e->value);
      if (!(ss >> lo >> hi)) raw.fail(key, e->line, "expected two numbers 'lo hi'");
      std::string rest;
      if (ss >> rest) raw.fail(key, e->line, "expected exactly two numbers");
    }
  }
  void optional_number(const std::string& key, std::optional<double>& out) const {
    if (const auto* e = raw.find(key)) {
      if (e->value == "auto") {
        out.reset();
        return;
      }
      out = parse_double(raw, key, *e);
    }
  }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

int ExperimentConfig::line_of(const std::string& section_key) const {
  const auto it = key_lines.find(section_key);
  return it == key_lines.end() ? 0 : it->second;
}

ExperimentConfig parse_config_text(const std::string& text,
                                   const std::string& filename) {
  const RawConfig raw = tokenize(text, filename);
  const Reader read{raw};
  ExperimentConfig c;

  read.text("geometry.kind", c.geometry);
  read.integer("geometry.cells", c.cells);
  read.number("geometry.length", c.length);
  read.integer("geometry.radial_cells", c.radial_cells);
  read.integer("geometry.angular_cells", c.angular_cells);
  read.number("geometry.inner_radius", c.inner_radius);
  read.number("geometry.outer_radius", c.outer_radius);

  read.number("time.horizon", c.horizon);
  read.integer("time.steps", c.steps);

  read.pair("regions.control", c.control_lo, c.control_hi);
  read.pair("regions.observe", c.observe_lo, c.observe_hi);
  read.text("regions.observe_boundary", c.observe_boundary);
  read.pair("regions.core", c.core_lo, c.core_hi);

  read.number("potentials.a1", c.a1);
  read.number("potentials.a2", c.a2);
  read.number("potentials.b1", c.b1);
  read.number("potentials.b2", c.b2);

  read.text("sources.shape", c.source_shape);
  read.number("sources.amplitude", c.source_amplitude);
  read.number("sources.center", c.source_center);
  read.number("sources.width", c.source_width);
  read.optional_number("sources.weight", c.source_weight);

  read.number("carleman.lambda", c.lambda);
  read.number("carleman.mu", c.mu);
  read.optional_number("carleman.weight", c.carleman_weight);
  read.number("carleman.profile_peak", c.profile_peak);

  read.number("hum.epsilon", c.epsilon);
  read.number("hum.cg_tol", c.cg_tol);
  read.integer("hum.max_iter", c.max_iter);
  read.boolean("hum.record_history", c.record_history);

  read.text("output.directory", c.output_directory);
  {
    std::string formats = std::string(c.write_json ? "json " : "") +
                          (c.write_csv ? "csv" : "");
    read.text("output.formats", formats);
    c.write_json = formats.find("json") != std::string::npos;
    c.write_csv = formats.find("csv") != std::string::npos;
  }

  read.unsigned64("run.seed", c.seed);
  read.integer("run.threads", c.threads);
  read.number("run.functional_start", c.functional_start);
  read.boolean("run.allow_disjoint_regions", c.allow_disjoint_regions);

  for (const auto& [key, entry] : raw.entries) {
    c.key_lines[key] = entry.line;
    if (!raw.consumed[key]) raw.fail(key, entry.line, "unknown configuration key");
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str(), path);
}

std::string normalized_config(const ExperimentConfig& c) {
  std::ostringstream out;
  out << "# normalized experiment configuration\n";
  out << "[geometry]\n";
  out << "kind = " << c.geometry << "\n";
  out << "cells = " << c.cells << "\n";
  out << "length = " << fmt(c.length) << "    # length units\n";
  out << "radial_cells = " << c.radial_cells << "\n";
  out << "angular_cells = " << c.angular_cells << "\n";
  out << "inner_radius = " << fmt(c.inner_radius) << "\n";
  out << "outer_radius = " << fmt(c.outer_radius) << "\n";
  out << "\n[time]\n";
  out << "horizon = " << fmt(c.horizon) << "   # time units\n";
  out << "steps = " << c.steps << "            # tree depth, at most 20\n";
  out << "\n[regions]\n";
  out << "control = " << fmt(c.control_lo) << " " << fmt(c.control_hi) << "\n";
  out << "observe = " << fmt(c.observe_lo) << " " << fmt(c.observe_hi) << "\n";
  out << "observe_boundary = " << c.observe_boundary << "\n";
  out << "core = " << fmt(c.core_lo) << " " << fmt(c.core_hi) << "\n";
  out << "\n[potentials]\n";
  out << "a1 = " << fmt(c.a1) << "             # 1/time\n";
  out << "a2 = " << fmt(c.a2) << "             # 1/sqrt(time)\n";
  out << "b1 = " << fmt(c.b1) << "\n";
  out << "b2 = " << fmt(c.b2) << "\n";
  out << "\n[sources]\n";
  out << "shape = " << c.source_shape << "\n";
  out << "amplitude = " << fmt(c.source_amplitude) << "\n";
  out << "center = " << fmt(c.source_center) << "\n";
  out << "width = " << fmt(c.source_width) << "\n";
  out << "weight = " << (c.source_weight ? fmt(*c.source_weight) : "auto") << "\n";
  out << "\n[carleman]\n";
  out << "lambda = " << fmt(c.lambda) << "\n";
  out << "mu = " << fmt(c.mu) << "\n";
  out << "weight = " << (c.carleman_weight ? fmt(*c.carleman_weight) : "auto") << "\n";
  out << "profile_peak = " << fmt(c.profile_peak) << "\n";
  out << "\n[hum]\n";
  out << "epsilon = " << fmt(c.epsilon) << "\n";
  out << "cg_tol = " << fmt(c.cg_tol) << "\n";
  out << "max_iter = " << c.max_iter << "\n";
  out << "record_history = " << (c.record_history ? "true" : "false") << "\n";
  out << "\n[output]\n";
  out << "directory = " << c.output_directory << "\n";
  out << "formats = "
      << (c.write_json ? (c.write_csv ? "json csv" : "json") : (c.write_csv ? "csv" : ""))
      << "\n";
  out << "\n[run]\n";
  out << "seed = " << c.seed << "\n";
  out << "threads = " << c.threads << "\n";
  out << "functional_start = " << fmt(c.functional_start) << "\n";
  out << "allow_disjoint_regions = " << (c.allow_disjoint_regions ? "true" : "false")
      << "\n";
  return out.str();
}

namespace {

std::string describe_mask(const Mesh& mesh, const RegionMask& mask,
                          const std::string& name) {
  return name + " snapped to " + std::to_string(mask.active_nodes()) +
         " node(s), measure " + fmt(mask.measure(mesh));
}

}  // namespace

BuiltProblem build_problem(const ExperimentConfig& c) {
  BuiltProblem built;
  InsensitizationProblem& p = built.problem;

  const auto where = [&](const char* key) {
    const int line = c.line_of(key);
    return line ? "config:" + std::to_string(line) + ": " : std::string();
  };
  if (c.geometry != "interval" && c.geometry != "annulus")
    throw ConfigError(where("geometry.kind") +
                      "geometry.kind must be 'interval' or 'annulus', got '" +
                      c.geometry + "'");
  const bool interval = c.geometry == "interval";
  auto mesh = std::make_shared<Mesh>(
      interval ? build_interval_mesh(c.cells, c.length)
               : build_annulus_mesh(c.radial_cells, c.angular_cells, c.inner_radius,
                                    c.outer_radius));
  auto tree = std::make_shared<NoiseTree>(build_tree(c.steps, c.horizon));
  p.mesh = mesh;
  p.tree = tree;
  p.potentials = Potentials::constants(c.a1, c.a2, c.b1, c.b2);

  if (interval) {
    p.control_region = interval_region(*mesh, c.control_lo, c.control_hi);
    p.observation_interior = interval_region(*mesh, c.observe_lo, c.observe_hi);
  } else {
    p.control_region = annulus_region(*mesh, c.control_lo, c.control_hi);
    p.observation_interior = annulus_region(*mesh, c.observe_lo, c.observe_hi);
  }

  const std::string side = c.observe_boundary;
  if (interval) {
    if (side != "left" && side != "right" && side != "both" && side != "none")
      throw ConfigError(where("regions.observe_boundary") +
                        "regions.observe_boundary must be left|right|both|none");
    p.observation_boundary = interval_boundary_region(
        *mesh, side == "left" || side == "both", side == "right" || side == "both");
  } else {
    if (side != "inner" && side != "outer" && side != "both" && side != "none")
      throw ConfigError(where("regions.observe_boundary") +
                        "regions.observe_boundary must be inner|outer|both|none");
    p.observation_boundary = annulus_boundary_region(
        *mesh, side == "inner" || side == "both", side == "outer" || side == "both");
  }

  RegionMask core_raw = interval ? interval_region(*mesh, c.core_lo, c.core_hi)
                                 : annulus_region(*mesh, c.core_lo, c.core_hi);
  RegionMask overlap = mask_intersection(p.control_region, p.observation_interior);
  if (overlap.is_empty() && c.allow_disjoint_regions)
    overlap = p.control_region;  // disjoint exploration: clip to G0 alone
  p.carleman_core = mask_intersection(core_raw, overlap);
  if (p.carleman_core.active_nodes() < core_raw.active_nodes())
    built.notes.push_back("core region clipped to the control/observation overlap (" +
                          std::to_string(core_raw.active_nodes()) + " -> " +
                          std::to_string(p.carleman_core.active_nodes()) +
                          " node(s))");
  if (p.carleman_core.is_empty())
    throw ConfigError(where("regions.core") +
                      "constraint violated: core region G1 must lie inside G0 and O "
                      "(empty after snapping)");

  built.notes.push_back(describe_mask(*mesh, p.control_region, "[regions] control"));
  built.notes.push_back(
      describe_mask(*mesh, p.observation_interior, "[regions] observe"));
  built.notes.push_back(describe_mask(*mesh, p.carleman_core, "[regions] core"));

  // Carleman parameters; the profile construction validates the core
  // placement against its critical nodes.
  built.carleman.lambda = c.lambda;
  built.carleman.mu = c.mu;
  built.carleman.core = p.carleman_core;
  built.carleman.profile_peak = c.profile_peak;
  built.carleman.profile = build_weight_profile(*mesh, p.carleman_core, c.profile_peak);
  built.carleman.observability_weight = c.carleman_weight.value_or(
      default_observability_weight(c.lambda, c.mu, c.profile_peak, c.horizon));

  p.source_weight = c.source_weight.value_or(built.carleman.observability_weight);
  p.initial = BulkSurfaceField(*mesh);
  p.functional_start = c.functional_start;
  p.threads = std::max(1, c.threads);

  if (c.source_shape == "bump") {
    BulkSurfaceField shape(*mesh);
    for (int i = 0; i < mesh->n_interior(); ++i) {
      const double x = mesh->interior_coord0(i);
      const double s = (x - c.source_center) / c.source_width;
      shape.values(i) = c.source_amplitude * std::exp(-0.5 * s * s);
    }
    auto src = std::make_shared<AdaptedField>(mesh->n_total(), tree->num_steps);
    for (int n = 0; n < tree->num_steps; ++n) {
      const double t = tree->time_at(n);
      const double damp = t > 0.0 ? std::exp(-p.source_weight / t) : 0.0;
      src->level(n).colwise() = (damp * shape.values).eval();
    }
    p.source = src;
  } else if (c.source_shape != "zero") {
    throw ConfigError(where("sources.shape") +
                      "sources.shape must be 'bump' or 'zero', got '" +
                      c.source_shape + "'");
  }

  built.hum.epsilon = c.epsilon;
  built.hum.cg_tol = c.cg_tol;
  built.hum.max_iter = c.max_iter;
  built.hum.record_history = c.record_history;
  built.hum.validate();

  const auto warnings = p.validate(c.allow_disjoint_regions);
  built.notes.insert(built.notes.end(), warnings.begin(), warnings.end());
  return built;
}

}  // namespace stochins
