#pragma once

#include <map>
#include <set>
#include <sstream>

#include "hjr/rollout.hpp"
#include "hjr/trainer.hpp"

namespace hjr {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Plain-text run configuration: [section] headers and `key = value` lines,
// '#' starts a comment. Repeated keys accumulate (used for lists such as
// scenario starts). Serialization is canonical (sections and keys sorted,
// repeats in original order), so equal resolved configs hash identically.
class ConfigDoc {
 public:
  ConfigDoc() = default;

  static ConfigDoc parse(std::string_view text, std::string origin = "config") {
    ConfigDoc doc;
    doc.origin_ = std::move(origin);
    std::string section;
    std::size_t lineno = 0;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto pos = line.find('#'); pos != std::string::npos) line.erase(pos);
      std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      if (trimmed.front() == '[') {
        if (trimmed.back() != ']')
          throw ConfigError(doc.origin_ + ":" + std::to_string(lineno) + ": unterminated section header");
        section = trim(trimmed.substr(1, trimmed.size() - 2));
        if (section.empty())
          throw ConfigError(doc.origin_ + ":" + std::to_string(lineno) + ": empty section name");
        doc.sections_[section];  // materialize even if empty
        continue;
      }
      auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw ConfigError(doc.origin_ + ":" + std::to_string(lineno) + ": expected key = value");
      std::string key = trim(trimmed.substr(0, eq));
      std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty())
        throw ConfigError(doc.origin_ + ":" + std::to_string(lineno) + ": empty key");
      if (section.empty())
        throw ConfigError(doc.origin_ + ":" + std::to_string(lineno) + ": key outside any [section]");
      doc.sections_[section][key].push_back(value);
    }
    return doc;
  }

  static ConfigDoc parse_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path.filename().string());
  }

  const std::string& origin() const { return origin_; }

  bool has_section(const std::string& s) const { return sections_.count(s) != 0; }
  bool has(const std::string& s, const std::string& k) const {
    auto it = sections_.find(s);
    return it != sections_.end() && it->second.count(k) != 0;
  }

  std::vector<std::string> section_names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : sections_) out.push_back(name);
    return out;
  }

  std::vector<std::string> keys(const std::string& s) const {
    std::vector<std::string> out;
    auto it = sections_.find(s);
    if (it != sections_.end())
      for (const auto& [k, _] : it->second) out.push_back(k);
    return out;
  }

  const std::vector<std::string>& get_all(const std::string& s, const std::string& k) const {
    auto it = sections_.find(s);
    if (it == sections_.end() || !it->second.count(k))
      throw ConfigError(origin_ + ": missing required field " + s + "." + k);
    return it->second.at(k);
  }

  std::string get_str(const std::string& s, const std::string& k) const { return get_all(s, k).back(); }

  std::string get_str(const std::string& s, const std::string& k, const std::string& fallback) const {
    return has(s, k) ? get_str(s, k) : fallback;
  }

  double get_num(const std::string& s, const std::string& k) const {
    return parse_num(get_str(s, k), s, k);
  }
  double get_num(const std::string& s, const std::string& k, double fallback) const {
    return has(s, k) ? get_num(s, k) : fallback;
  }

  long long get_int(const std::string& s, const std::string& k) const {
    const double v = get_num(s, k);
    const long long i = static_cast<long long>(std::llround(v));
    if (static_cast<double>(i) != v)
      throw ConfigError(origin_ + ": field " + s + "." + k + " must be an integer");
    return i;
  }
  long long get_int(const std::string& s, const std::string& k, long long fallback) const {
    return has(s, k) ? get_int(s, k) : fallback;
  }

  std::vector<double> get_nums(const std::string& s, const std::string& k) const {
    std::istringstream in(get_str(s, k));
    std::vector<double> out;
    std::string tok;
    while (in >> tok) out.push_back(parse_num(tok, s, k));
    if (out.empty()) throw ConfigError(origin_ + ": field " + s + "." + k + " must list numbers");
    return out;
  }

  void set(const std::string& s, const std::string& k, const std::string& v) {
    sections_[s][k] = {v};
  }
  void set_num(const std::string& s, const std::string& k, double v) {
    std::ostringstream out;
    out << std::setprecision(17) << v;
    set(s, k, out.str());
  }

  /// Canonical text: sections and keys in sorted order.
  std::string serialize() const {
    std::ostringstream out;
    for (const auto& [name, kv] : sections_) {
      out << "[" << name << "]\n";
      for (const auto& [k, vals] : kv)
        for (const auto& v : vals) out << k << " = " << v << "\n";
      out << "\n";
    }
    return out.str();
  }

  std::uint64_t hash() const { return fnv1a64(serialize()); }

  /// Rejects keys outside the allowed set for a section (typo guard).
  void require_known_keys(const std::string& s, const std::set<std::string>& allowed) const {
    auto it = sections_.find(s);
    if (it == sections_.end()) return;
    for (const auto& [k, _] : it->second)
      if (!allowed.count(k))
        throw ConfigError(origin_ + ": unknown field " + s + "." + k);
  }

 private:
  static std::string trim(std::string_view sv) {
    std::size_t b = sv.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    std::size_t e = sv.find_last_not_of(" \t\r\n");
    return std::string(sv.substr(b, e - b + 1));
  }

  double parse_num(const std::string& text, const std::string& s, const std::string& k) const {
    try {
      std::size_t pos = 0;
      double v = std::stod(text, &pos);
      if (pos != text.size()) throw std::invalid_argument("trailing characters");
      return v;
    } catch (const std::exception&) {
      throw ConfigError(origin_ + ": field " + s + "." + k + " is not a number: '" + text + "'");
    }
  }

  std::string origin_ = "config";
  std::map<std::string, std::map<std::string, std::vector<std::string>>> sections_;
};

// ---------------------------------------------------------------------------
// System factory. Every parameter has a default; effective values are written
// back into the doc so the resolved config is fully materialized.
// ---------------------------------------------------------------------------

inline std::shared_ptr<const System> make_system(ConfigDoc& doc) {
  const std::string name = doc.get_str("system", "name");
  auto num = [&](const char* key, double dflt) {
    double v = doc.get_num("system", key, dflt);
    doc.set_num("system", key, v);
    return v;
  };
  std::set<std::string> allowed = {"name"};
  std::shared_ptr<const System> sys;
  if (name == "air3d" || name == "joint6d" || name == "three_vehicle9d") {
    allowed.insert({"evader_speed", "pursuer_speed", "max_turn_rate", "collision_radius", "horizon",
                    "position_bound"});
    doc.require_known_keys("system", allowed);
    const double ve = num("evader_speed", 0.75), vp = num("pursuer_speed", 0.75);
    const double w = num("max_turn_rate", 3.0), beta = num("collision_radius", 0.25);
    const double T = num("horizon", 1.0), pb = num("position_bound", 1.0);
    if (name == "air3d")
      sys = std::make_shared<Air3D>(Air3DParams{ve, vp, w, beta, T, pb});
    else if (name == "joint6d")
      sys = std::make_shared<JointPursuit6D>(Joint6DParams{ve, vp, w, beta, T, pb});
    else
      sys = std::make_shared<ThreeVehicle9D>(ThreeVehicle9DParams{ve, vp, w, beta, T, pb});
  } else if (name == "narrow_passage10d") {
    allowed.insert({"vehicle_length", "vehicle_radius", "accel_lo", "accel_hi", "steer_rate_lo",
                    "steer_rate_hi", "target1", "target2", "curb_y", "stranded_x", "stranded_y",
                    "stranded_radius", "horizon", "x_bound", "speed_lo", "speed_hi", "max_steer"});
    doc.require_known_keys("system", allowed);
    NarrowPassageParams p;
    p.vehicle_length = num("vehicle_length", p.vehicle_length);
    p.vehicle_radius = num("vehicle_radius", p.vehicle_radius);
    p.accel_bounds = {num("accel_lo", p.accel_bounds.lo), num("accel_hi", p.accel_bounds.hi)};
    p.steer_rate_bounds = {num("steer_rate_lo", p.steer_rate_bounds.lo),
                           num("steer_rate_hi", p.steer_rate_bounds.hi)};
    auto box = [&](const char* key, std::array<Interval, 2> dflt) {
      if (doc.has("system", key)) {
        auto v = doc.get_nums("system", key);
        if (v.size() != 4) throw ConfigError("system." + std::string(key) + " needs 4 numbers: x_lo x_hi y_lo y_hi");
        dflt = {{{v[0], v[1]}, {v[2], v[3]}}};
      }
      std::ostringstream text;
      text << std::setprecision(17) << dflt[0].lo << " " << dflt[0].hi << " " << dflt[1].lo << " " << dflt[1].hi;
      doc.set("system", key, text.str());
      return dflt;
    };
    p.target1 = box("target1", p.target1);
    p.target2 = box("target2", p.target2);
    p.curb_y = num("curb_y", p.curb_y);
    p.stranded_position = {num("stranded_x", p.stranded_position[0]),
                           num("stranded_y", p.stranded_position[1])};
    p.stranded_radius = num("stranded_radius", p.stranded_radius);
    p.horizon = num("horizon", p.horizon);
    p.x_bound = num("x_bound", p.x_bound);
    p.speed_bounds = {num("speed_lo", p.speed_bounds.lo), num("speed_hi", p.speed_bounds.hi)};
    p.max_steer = num("max_steer", p.max_steer);
    sys = std::make_shared<NarrowPassage10D>(p);
  } else if (name == "integrator1d_control" || name == "integrator1d_disturbance") {
    allowed.insert({"horizon"});
    doc.require_known_keys("system", allowed);
    const double T = num("horizon", 0.5);
    sys = std::make_shared<Integrator1D>(name == "integrator1d_control" ? Integrator1D::Kind::Control
                                                                        : Integrator1D::Kind::Disturbance,
                                         T);
  } else {
    throw ConfigError("unknown system '" + name +
                      "' (expected air3d|joint6d|three_vehicle9d|narrow_passage10d|"
                      "integrator1d_control|integrator1d_disturbance)");
  }
  return sys;
}

// ---------------------------------------------------------------------------
// Run configuration: [system], [network], [schedule], optional [grid].
// ---------------------------------------------------------------------------

struct RunConfig {
  std::shared_ptr<const System> system;
  NetConfig net;
  TrainSchedule schedule;
  std::vector<int> grid_resolution;
  std::vector<double> grid_snapshots;
  ConfigDoc resolved;
};

inline RunConfig load_run_config(ConfigDoc doc) {
  RunConfig rc;
  if (!doc.has_section("system")) throw ConfigError(doc.origin() + ": missing [system] section");
  rc.system = make_system(doc);

  doc.require_known_keys("network", {"hidden_layers", "hidden_width", "omega0", "activation"});
  rc.net.hidden_layers = static_cast<int>(doc.get_int("network", "hidden_layers", 3));
  rc.net.hidden_width = static_cast<int>(doc.get_int("network", "hidden_width", 512));
  rc.net.omega0 = doc.get_num("network", "omega0", 30.0);
  rc.net.activation = activation_from_string(doc.get_str("network", "activation", "sine"));
  if (rc.net.hidden_layers < 1 || rc.net.hidden_width < 1)
    throw ConfigError(doc.origin() + ": network dimensions must be positive");
  doc.set_num("network", "hidden_layers", rc.net.hidden_layers);
  doc.set_num("network", "hidden_width", rc.net.hidden_width);
  doc.set_num("network", "omega0", rc.net.omega0);
  doc.set("network", "activation", to_string(rc.net.activation));

  doc.require_known_keys(
      "schedule", {"batch_size", "pretrain_iters", "curriculum_iters", "learning_rate", "adam_beta1",
                   "adam_beta2", "adam_eps", "lambda_policy", "terminal_fraction", "seed",
                   "checkpoint_every", "workers"});
  TrainSchedule& s = rc.schedule;
  s.batch_size = static_cast<int>(doc.get_int("schedule", "batch_size", 65000));
  s.pretrain_iters = static_cast<int>(doc.get_int("schedule", "pretrain_iters", 10000));
  s.curriculum_iters = static_cast<int>(doc.get_int("schedule", "curriculum_iters", 100000));
  s.learning_rate = doc.get_num("schedule", "learning_rate", 1e-4);
  s.adam_beta1 = doc.get_num("schedule", "adam_beta1", 0.9);
  s.adam_beta2 = doc.get_num("schedule", "adam_beta2", 0.999);
  s.adam_eps = doc.get_num("schedule", "adam_eps", 1e-8);
  s.terminal_fraction = doc.get_num("schedule", "terminal_fraction", 0.1);
  if (!doc.has("schedule", "seed"))
    throw ConfigError(doc.origin() + ": missing required field schedule.seed");
  s.seed = static_cast<std::uint64_t>(doc.get_int("schedule", "seed"));
  s.checkpoint_every = static_cast<int>(doc.get_int("schedule", "checkpoint_every", 1000));
  s.workers = static_cast<int>(doc.get_int("schedule", "workers", 1));
  if (s.workers <= 0) s.workers = static_cast<int>(std::thread::hardware_concurrency());
  if (s.workers < 1) s.workers = 1;
  const std::string lp = doc.get_str("schedule", "lambda_policy", "auto");
  if (lp == "auto") {
    s.lambda_policy = LambdaPolicy::AutoBalance;
  } else if (lp.rfind("fixed:", 0) == 0) {
    s.lambda_policy = LambdaPolicy::Fixed;
    try {
      s.lambda_fixed = std::stod(lp.substr(6));
    } catch (const std::exception&) {
      throw ConfigError(doc.origin() + ": schedule.lambda_policy fixed:<value> needs a number");
    }
  } else {
    throw ConfigError(doc.origin() + ": schedule.lambda_policy must be 'auto' or 'fixed:<value>'");
  }
  s.validate();
  doc.set_num("schedule", "batch_size", s.batch_size);
  doc.set_num("schedule", "pretrain_iters", s.pretrain_iters);
  doc.set_num("schedule", "curriculum_iters", s.curriculum_iters);
  doc.set_num("schedule", "learning_rate", s.learning_rate);
  doc.set_num("schedule", "adam_beta1", s.adam_beta1);
  doc.set_num("schedule", "adam_beta2", s.adam_beta2);
  doc.set_num("schedule", "adam_eps", s.adam_eps);
  doc.set("schedule", "lambda_policy", lp);
  doc.set_num("schedule", "terminal_fraction", s.terminal_fraction);
  doc.set_num("schedule", "seed", static_cast<double>(s.seed));
  doc.set_num("schedule", "checkpoint_every", s.checkpoint_every);
  doc.set_num("schedule", "workers", s.workers);

  doc.require_known_keys("grid", {"resolution", "snapshots"});
  if (doc.has_section("grid")) {
    for (double v : doc.get_nums("grid", "resolution"))
      rc.grid_resolution.push_back(static_cast<int>(std::llround(v)));
    if (doc.has("grid", "snapshots")) rc.grid_snapshots = doc.get_nums("grid", "snapshots");
  }

  rc.resolved = std::move(doc);
  return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  return load_run_config(ConfigDoc::parse_file(path));
}

// ---------------------------------------------------------------------------
// Rollout scenarios: [system] plus [scenario] with one or more start states.
// ---------------------------------------------------------------------------

struct Scenario {
  std::shared_ptr<const System> system;
  RolloutOptions options;
  double epsilon = 0.0;
  std::vector<std::vector<double>> starts;
  bool has_nominal = false;
  FilterPolicy policy;  // nominal + epsilon (when has_nominal)
};

inline Scenario load_scenario(ConfigDoc doc) {
  Scenario sc;
  if (!doc.has_section("system")) throw ConfigError(doc.origin() + ": missing [system] section");
  sc.system = make_system(doc);
  doc.require_known_keys("scenario", {"t0", "dt", "duration", "epsilon", "start", "nominal", "nominal_at"});
  if (!doc.has_section("scenario")) throw ConfigError(doc.origin() + ": missing [scenario] section");
  sc.options.t0 = doc.get_num("scenario", "t0", 0.0);
  sc.options.dt = doc.get_num("scenario", "dt", 0.01);
  sc.options.duration = doc.get_num("scenario", "duration", -1.0);
  sc.epsilon = doc.get_num("scenario", "epsilon", 0.0);
  if (!doc.has("scenario", "start"))
    throw ConfigError(doc.origin() + ": missing required field scenario.start");
  for (const std::string& line : doc.get_all("scenario", "start")) {
    std::istringstream in(line);
    std::vector<double> x;
    double v;
    while (in >> v) x.push_back(v);
    if (static_cast<int>(x.size()) != sc.system->state_dim())
      throw ConfigError(doc.origin() + ": scenario.start needs " +
                        std::to_string(sc.system->state_dim()) + " numbers, got " +
                        std::to_string(x.size()));
    sc.starts.push_back(std::move(x));
  }
  const std::size_t nu = static_cast<std::size_t>(sc.system->control_dim());
  if (doc.has("scenario", "nominal")) {
    auto u = doc.get_nums("scenario", "nominal");
    if (u.size() != nu)
      throw ConfigError(doc.origin() + ": scenario.nominal needs one value per control");
    sc.policy = FilterPolicy::constant(std::move(u));
    sc.has_nominal = true;
  } else if (doc.has("scenario", "nominal_at")) {
    std::vector<std::pair<double, std::vector<double>>> knots;
    for (const std::string& line : doc.get_all("scenario", "nominal_at")) {
      std::istringstream in(line);
      std::vector<double> vals;
      double v;
      while (in >> v) vals.push_back(v);
      if (vals.size() != nu + 1)
        throw ConfigError(doc.origin() + ": scenario.nominal_at needs: time then one value per control");
      knots.emplace_back(vals[0], std::vector<double>(vals.begin() + 1, vals.end()));
    }
    sc.policy = FilterPolicy::scripted(std::move(knots));
    sc.has_nominal = true;
  }
  sc.policy.epsilon = sc.epsilon;
  return sc;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  return load_scenario(ConfigDoc::parse_file(path));
}

}  // namespace hjr
