#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "swmpc/errors.hpp"
#include "swmpc/ocp.hpp"

namespace swmpc {

struct ExperimentConfig {
  std::string model{"example1"};
  int N{-1};       // -1: model default (example1 20, example2 40)
  double dt{0.1};
  int l{1};
  int h{-1};       // -1: fresh problem, h = l
  int steps{-1};   // -1: model default (example1 50, example2 horizon/dt)
  double horizon_seconds{-1.0};
  unsigned seed{0};
  std::string output{"run"};
  std::string terminal_set{"none"};  // none | srci
  std::optional<Eigen::VectorXd> x0;
  SolverOptions solver;
  int srci_l{-1};  // -1: use l
  int srci_max_iter{200};
  int srci_samples{1000};
  int srci_max_rows{5000};
  std::vector<int> sweep_l;
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

[[noreturn]] inline void config_fail(const std::string& where, int line,
                                     const std::string& what) {
  throw ConfigError(where + ":" + std::to_string(line) + ": " + what);
}

inline double parse_double(const std::string& where, int line, const std::string& v) {
  try {
    size_t idx = 0;
    const double x = std::stod(v, &idx);
    if (idx != v.size()) config_fail(where, line, "trailing characters in number '" + v + "'");
    return x;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    config_fail(where, line, "expected a number, got '" + v + "'");
  }
}

inline int parse_int(const std::string& where, int line, const std::string& v) {
  const double x = parse_double(where, line, v);
  const int i = static_cast<int>(x);
  if (static_cast<double>(i) != x) config_fail(where, line, "expected an integer, got '" + v + "'");
  return i;
}

inline bool parse_bool(const std::string& where, int line, const std::string& v) {
  const std::string s = lower(v);
  if (s == "true" || s == "on" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "off" || s == "0" || s == "no") return false;
  config_fail(where, line, "expected a boolean, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace detail

/// Flat key-value configuration with [sections]; '#' starts a comment.
/// Unknown sections or keys are rejected with their line number.
inline ExperimentConfig parse_config_text(const std::string& text,
                                          const std::string& where = "config") {
  using detail::config_fail;
  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::string section = "experiment";
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string s = raw;
    const size_t hash = s.find('#');
    if (hash != std::string::npos) s = s.substr(0, hash);
    s = detail::trim(s);
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') config_fail(where, line, "unterminated section header");
      section = detail::lower(detail::trim(s.substr(1, s.size() - 2)));
      if (section != "experiment" && section != "solver" && section != "srci" &&
          section != "sweep")
        config_fail(where, line, "unknown section [" + section + "]");
      continue;
    }
    const size_t eq = s.find('=');
    if (eq == std::string::npos) config_fail(where, line, "expected 'key = value'");
    const std::string key = detail::lower(detail::trim(s.substr(0, eq)));
    const std::string val = detail::trim(s.substr(eq + 1));
    if (key.empty()) config_fail(where, line, "empty key");
    if (val.empty()) config_fail(where, line, "empty value for key '" + key + "'");
    const std::string qual = section + "." + key;
    if (!seen.insert(qual).second) config_fail(where, line, "duplicate key '" + key + "'");

    if (section == "experiment") {
      if (key == "model") {
        cfg.model = detail::lower(val);
        if (cfg.model != "example1" && cfg.model != "example2")
          config_fail(where, line, "unknown model '" + val + "'");
      } else if (key == "n") {
        cfg.N = detail::parse_int(where, line, val);
      } else if (key == "dt") {
        cfg.dt = detail::parse_double(where, line, val);
      } else if (key == "l") {
        cfg.l = detail::parse_int(where, line, val);
      } else if (key == "h") {
        cfg.h = detail::parse_int(where, line, val);
      } else if (key == "steps") {
        cfg.steps = detail::parse_int(where, line, val);
      } else if (key == "horizon_seconds") {
        cfg.horizon_seconds = detail::parse_double(where, line, val);
      } else if (key == "seed") {
        cfg.seed = static_cast<unsigned>(detail::parse_int(where, line, val));
      } else if (key == "output") {
        cfg.output = val;
      } else if (key == "terminal_set") {
        cfg.terminal_set = detail::lower(val);
        if (cfg.terminal_set != "none" && cfg.terminal_set != "srci")
          config_fail(where, line, "terminal_set must be 'none' or 'srci'");
      } else if (key == "x0") {
        const auto items = detail::split_list(val);
        Eigen::VectorXd x(static_cast<int>(items.size()));
        for (size_t k = 0; k < items.size(); ++k)
          x(static_cast<int>(k)) = detail::parse_double(where, line, items[k]);
        cfg.x0 = x;
      } else {
        config_fail(where, line, "unknown key '" + key + "' in section [experiment]");
      }
    } else if (section == "solver") {
      if (key == "tol_kkt") cfg.solver.tol_kkt = detail::parse_double(where, line, val);
      else if (key == "max_iter") cfg.solver.max_iter = detail::parse_int(where, line, val);
      else if (key == "rho") cfg.solver.rho = detail::parse_double(where, line, val);
      else if (key == "soften") cfg.solver.soften = detail::parse_bool(where, line, val);
      else if (key == "substeps") cfg.solver.substeps = detail::parse_int(where, line, val);
      else if (key == "reg") cfg.solver.reg = detail::parse_double(where, line, val);
      else if (key == "tol_feas") cfg.solver.tol_feas = detail::parse_double(where, line, val);
      else config_fail(where, line, "unknown key '" + key + "' in section [solver]");
    } else if (section == "srci") {
      if (key == "l") cfg.srci_l = detail::parse_int(where, line, val);
      else if (key == "max_iter") cfg.srci_max_iter = detail::parse_int(where, line, val);
      else if (key == "samples") cfg.srci_samples = detail::parse_int(where, line, val);
      else if (key == "max_rows") cfg.srci_max_rows = detail::parse_int(where, line, val);
      else config_fail(where, line, "unknown key '" + key + "' in section [srci]");
    } else {  // sweep
      if (key == "l_values") {
        cfg.sweep_l.clear();
        for (const auto& item : detail::split_list(val))
          cfg.sweep_l.push_back(detail::parse_int(where, line, item));
        if (cfg.sweep_l.empty()) config_fail(where, line, "l_values must be nonempty");
      } else {
        config_fail(where, line, "unknown key '" + key + "' in section [sweep]");
      }
    }
  }

  if (cfg.N == -1) cfg.N = cfg.model == "example2" ? 40 : 20;
  if (cfg.horizon_seconds > 0.0 && cfg.steps == -1)
    cfg.steps = static_cast<int>(std::lround(cfg.horizon_seconds / cfg.dt));
  if (cfg.steps == -1) cfg.steps = cfg.model == "example2" ? 80 : 50;

  if (cfg.N < 1) throw ConfigError(where + ": N must be >= 1");
  if (!(cfg.dt > 0.0)) throw ConfigError(where + ": dt must be positive");
  if (cfg.l < 1) throw ConfigError(where + ": l must be >= 1");
  if (cfg.N % cfg.l != 0)
    throw ConfigError(where + ": blocking arithmetic fails, l = " + std::to_string(cfg.l) +
                      " does not divide N = " + std::to_string(cfg.N));
  if (cfg.h != -1 && (cfg.h < 1 || cfg.h > cfg.l))
    throw ConfigError(where + ": h must satisfy 1 <= h <= l");
  if (cfg.steps < 1) throw ConfigError(where + ": steps must be >= 1");
  for (const int lv : cfg.sweep_l)
    if (lv < 1 || cfg.N % lv != 0)
      throw ConfigError(where + ": sweep l value " + std::to_string(lv) +
                        " does not divide N = " + std::to_string(cfg.N));
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

}  // namespace swmpc
