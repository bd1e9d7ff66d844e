#pragma once

// JSON run specifications for the command-line front end.
//
//   {
//     "format_version": 1,
//     "command": "estimate",
//     "erasures": [0.1, 0.1],
//     "buffer_blocks": [2],          // or "buffer_packets": [4]
//     "block_size": 2,
//     "estimator": {"tol": 1e-9, "max_iter": 10000, "schedule": "jacobi"},
//     "tail_tolerance": 1e-9,
//     "sim": {"epochs": 1000000, "warmup_blocks": 200, "seed": 1, "replications": 1},
//     "sweep": {"param": "m", "values": [5, 10]},
//     "out_dir": "out"
//   }
//
// Sweep parameters: "m" (packets per intermediate buffer, all nodes), "K",
// "eps" (every link) and "eps_link" (one link, named by "link").

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "blockrlc/error.hpp"
#include "blockrlc/estimator.hpp"
#include "blockrlc/simulator.hpp"

namespace blockrlc {

using json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

enum class Command { estimate, simulate, delay, compare, sweep };

inline const char* to_string(Command c) {
  switch (c) {
    case Command::estimate: return "estimate";
    case Command::simulate: return "simulate";
    case Command::delay: return "delay";
    case Command::compare: return "compare";
    case Command::sweep: return "sweep";
  }
  return "?";
}

inline Command parse_command(const std::string& s) {
  for (auto c : {Command::estimate, Command::simulate, Command::delay, Command::compare, Command::sweep}) {
    if (s == to_string(c)) return c;
  }
  throw ConfigError("unknown command \"" + s + "\"");
}

struct SweepAxis {
  std::string param;  // m | K | eps | eps_link
  std::vector<double> values;
  int link = 0;  // eps_link only, 1-based

  friend bool operator==(const SweepAxis&, const SweepAxis&) = default;
};

struct RunSpec {
  Command command = Command::estimate;
  NetworkConfig network;
  bool buffers_in_packets = false;  // which form the buffers were given in
  double tol = 1e-9;
  int max_iter = 10'000;
  UpdateSchedule schedule = UpdateSchedule::jacobi;
  double tail_tolerance = kDefaultTailTolerance;
  std::optional<SimConfig> sim;
  std::optional<SweepAxis> sweep;
  std::string out_dir;

  EstimatorOptions estimator_options() const {
    EstimatorOptions o;
    o.tol = tol;
    o.max_iter = max_iter;
    o.schedule = schedule;
    return o;
  }

  friend bool operator==(const RunSpec&, const RunSpec&) = default;
};

// Network with the sweep axis set to `value`.
inline NetworkConfig apply_sweep_value(const RunSpec& spec, double value) {
  if (!spec.sweep) throw ConfigError("no sweep axis");
  NetworkConfig net = spec.network;
  const auto& axis = *spec.sweep;
  const auto as_int = [&](const char* what) {
    if (value != std::floor(value) || value < 1) throw ConfigError(std::string(what) + " values must be positive integers");
    return static_cast<int>(value);
  };
  if (axis.param == "m") {
    const int m = as_int("m");
    if (m % net.K != 0) throw ConfigError("m must be a multiple of K");
    for (int& b : net.blocks) b = m / net.K;
  } else if (axis.param == "K") {
    const int K = as_int("K");
    if (spec.buffers_in_packets) {
      for (int& b : net.blocks) {
        const int m = b * net.K;
        if (m % K != 0) throw ConfigError("m must be a multiple of K");
        b = m / K;
      }
    }
    net.K = K;
  } else if (axis.param == "eps") {
    for (double& e : net.erasures) e = value;
  } else if (axis.param == "eps_link") {
    net.erasures.at(static_cast<std::size_t>(axis.link - 1)) = value;
  } else {
    throw ConfigError("unknown sweep parameter \"" + axis.param + "\"");
  }
  try {
    net.validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  return net;
}

namespace detail {

inline void reject_unknown_keys(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown key \"" + key + "\" in " + where);
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace detail

inline RunSpec parse_spec(const json& j) {
  try {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    detail::reject_unknown_keys(j,
                                {"format_version", "command", "erasures", "buffer_blocks", "buffer_packets",
                                 "block_size", "estimator", "tail_tolerance", "sim", "sweep", "out_dir"},
                                "config");
    const int version = detail::get_or(j, "format_version", kFormatVersion);
    if (version != kFormatVersion) throw ConfigError("unsupported format_version " + std::to_string(version));

    RunSpec spec;
    if (j.contains("command")) spec.command = parse_command(j.at("command").get<std::string>());
    if (!j.contains("erasures")) throw ConfigError("missing \"erasures\"");
    if (!j.contains("block_size")) throw ConfigError("missing \"block_size\"");
    spec.network.erasures = j.at("erasures").get<std::vector<double>>();
    spec.network.K = j.at("block_size").get<int>();
    if (spec.network.K < 1) throw ConfigError("block_size must be at least 1");

    const bool blocks = j.contains("buffer_blocks"), packets = j.contains("buffer_packets");
    if (blocks == packets) throw ConfigError("give exactly one of \"buffer_blocks\" and \"buffer_packets\"");
    if (blocks) {
      spec.network.blocks = j.at("buffer_blocks").get<std::vector<int>>();
    } else {
      spec.buffers_in_packets = true;
      for (int m : j.at("buffer_packets").get<std::vector<int>>()) {
        if (m % spec.network.K != 0) throw ConfigError("m must be a multiple of K");
        spec.network.blocks.push_back(m / spec.network.K);
      }
    }
    spec.network.validate();

    if (j.contains("estimator")) {
      const auto& e = j.at("estimator");
      detail::reject_unknown_keys(e, {"tol", "max_iter", "schedule"}, "estimator");
      spec.tol = detail::get_or(e, "tol", spec.tol);
      spec.max_iter = detail::get_or(e, "max_iter", spec.max_iter);
      const auto schedule = detail::get_or<std::string>(e, "schedule", "jacobi");
      if (schedule == "jacobi") {
        spec.schedule = UpdateSchedule::jacobi;
      } else if (schedule == "gauss_seidel") {
        spec.schedule = UpdateSchedule::gauss_seidel;
      } else {
        throw ConfigError("unknown schedule \"" + schedule + "\"");
      }
    }
    if (!(spec.tol > 0.0)) throw ConfigError("estimator tol must be positive");
    if (spec.max_iter < 1) throw ConfigError("estimator max_iter must be at least 1");
    spec.tail_tolerance = detail::get_or(j, "tail_tolerance", spec.tail_tolerance);
    if (!(spec.tail_tolerance > 0.0 && spec.tail_tolerance < 1.0)) throw ConfigError("tail_tolerance outside (0,1)");

    if (j.contains("sim")) {
      const auto& s = j.at("sim");
      detail::reject_unknown_keys(s, {"epochs", "warmup_blocks", "seed", "replications", "measure_fraction"}, "sim");
      SimConfig sim;
      sim.epochs = detail::get_or(s, "epochs", sim.epochs);
      sim.warmup_blocks = detail::get_or(s, "warmup_blocks", sim.warmup_blocks);
      sim.seed = detail::get_or(s, "seed", sim.seed);
      sim.replications = detail::get_or(s, "replications", sim.replications);
      sim.measure_fraction = detail::get_or(s, "measure_fraction", sim.measure_fraction);
      sim.validate();
      spec.sim = sim;
    }

    if (j.contains("sweep")) {
      const auto& s = j.at("sweep");
      detail::reject_unknown_keys(s, {"param", "values", "link"}, "sweep");
      SweepAxis axis;
      axis.param = s.at("param").get<std::string>();
      axis.values = s.at("values").get<std::vector<double>>();
      axis.link = detail::get_or(s, "link", 0);
      if (axis.param != "m" && axis.param != "K" && axis.param != "eps" && axis.param != "eps_link") {
        throw ConfigError("unknown sweep parameter \"" + axis.param + "\"");
      }
      if (axis.param == "eps_link" && (axis.link < 1 || axis.link > spec.network.hops())) {
        throw ConfigError("sweep link outside 1..h");
      }
      if (axis.param != "eps_link" && s.contains("link")) throw ConfigError("\"link\" only applies to eps_link");
      if (axis.values.empty()) throw ConfigError("sweep needs at least one value");
      spec.sweep = axis;
      for (double v : axis.values) apply_sweep_value(spec, v);
    }
    if (spec.command == Command::sweep && !spec.sweep) throw ConfigError("sweep command needs a \"sweep\" axis");

    spec.out_dir = detail::get_or<std::string>(j, "out_dir", "");
    return spec;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
}

inline RunSpec parse_spec_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what());
  }
  return parse_spec(j);
}

inline RunSpec parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream text;
  text << in.rdbuf();
  if (in.bad()) throw IoError("cannot read " + path);
  return parse_spec_text(text.str());
}

inline json emit_spec(const RunSpec& spec) {
  json j;
  j["format_version"] = kFormatVersion;
  j["command"] = to_string(spec.command);
  j["erasures"] = spec.network.erasures;
  j["block_size"] = spec.network.K;
  if (spec.buffers_in_packets) {
    std::vector<int> m;
    for (int b : spec.network.blocks) m.push_back(b * spec.network.K);
    j["buffer_packets"] = m;
  } else {
    j["buffer_blocks"] = spec.network.blocks;
  }
  j["estimator"] = {{"tol", spec.tol},
                    {"max_iter", spec.max_iter},
                    {"schedule", spec.schedule == UpdateSchedule::jacobi ? "jacobi" : "gauss_seidel"}};
  j["tail_tolerance"] = spec.tail_tolerance;
  if (spec.sim) {
    j["sim"] = {{"epochs", spec.sim->epochs},
                {"warmup_blocks", spec.sim->warmup_blocks},
                {"seed", spec.sim->seed},
                {"replications", spec.sim->replications},
                {"measure_fraction", spec.sim->measure_fraction}};
  }
  if (spec.sweep) {
    j["sweep"] = {{"param", spec.sweep->param}, {"values", spec.sweep->values}};
    if (spec.sweep->param == "eps_link") j["sweep"]["link"] = spec.sweep->link;
  }
  j["out_dir"] = spec.out_dir;
  return j;
}

}  // namespace blockrlc
