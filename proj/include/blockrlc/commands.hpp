#pragma once

// Command drivers behind the blockrlc tool. Each returns a JSON report and the
// tables to be written next to it; nothing here touches the filesystem except
// write_outputs.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "blockrlc/config.hpp"
#include "blockrlc/delay.hpp"
#include "blockrlc/error.hpp"
#include "blockrlc/estimator.hpp"
#include "blockrlc/simulator.hpp"

namespace blockrlc {

struct OutputFile {
  std::string name;
  std::string content;
};

struct CommandResult {
  json report;
  std::vector<OutputFile> files;
};

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNonConvergence = 3;
inline constexpr int kExitIo = 4;

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const IoError*>(&e)) return kExitIo;
  if (dynamic_cast<const SolverError*>(&e)) return kExitNonConvergence;
  if (dynamic_cast<const DomainError*>(&e)) return kExitConfig;
  return 1;
}

inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline double state_total_variation(const StateDistribution& a, const StateDistribution& b) {
  if (a.states() != b.states()) throw DomainError("state spaces differ");
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) acc += std::abs(a.probabilities()[k] - b.probabilities()[k]);
  return 0.5 * acc;
}

// ---- JSON views ---------------------------------------------------------

inline json network_json(const NetworkConfig& net) {
  return {{"erasures", net.erasures}, {"buffer_blocks", net.blocks}, {"block_size", net.K}};
}

inline json state_table_json(const StateDistribution& d) {
  json rows = json::array();
  for (std::size_t k = 0; k < d.size(); ++k) {
    rows.push_back({{"s", d.states()[k].s}, {"t", d.states()[k].t}, {"p", d.probabilities()[k]}});
  }
  return rows;
}

inline json solution_json(const Solution& sol) {
  return {{"r", sol.r},
          {"p_b", sol.p_b},
          {"throughput", throughput(sol)},
          {"iterations", sol.iterations},
          {"residual", sol.residual},
          {"damped", sol.damped}};
}

inline json sim_report_json(const SimReport& rep) {
  json j;
  j["format_version"] = kFormatVersion;
  j["network"] = network_json(rep.net);
  j["rng"] = rep.rng;
  j["seed"] = rep.sim.seed;
  j["replications"] = rep.sim.replications;
  j["epochs"] = rep.sim.epochs;
  j["warmup_blocks"] = rep.sim.warmup_blocks;
  j["measured_epochs"] = rep.measured_epochs;
  j["delivered_packets"] = rep.delivered_packets;
  j["throughput"] = rep.throughput;
  j["throughput_standard_error"] = rep.throughput_standard_error();
  json per = json::array();
  for (const auto& [seed, thr] : rep.replication_throughput) per.push_back({{"seed", seed}, {"throughput", thr}});
  j["replication_throughput"] = per;
  j["blocks_started"] = rep.blocks_started;
  j["blocks_completed"] = rep.blocks_completed;

  json delay = {{"blocks", rep.delay_blocks()}};
  json hist = json::array();
  for (std::size_t d = 0; d < rep.delay_counts.size(); ++d) {
    if (rep.delay_counts[d] > 0) hist.push_back({d, rep.delay_counts[d]});
  }
  delay["histogram"] = hist;
  if (rep.delay_blocks() > 0) {
    const auto m = moments(rep.delay_pmf());
    delay["mean"] = m.mean;
    delay["std"] = m.stddev;
  }
  j["delay"] = delay;

  json nodes = json::array();
  for (std::size_t i = 0; i < rep.nodes.size(); ++i) {
    const int node = static_cast<int>(i) + 1;
    json n = {{"node", node}, {"M", rep.nodes[i].M}, {"K", rep.nodes[i].K},
              {"blocking_freq", rep.nodes[i].blocking_freq()}};
    if (rep.measured_epochs > 0) {
      const auto rf = occupancy_distribution(rep, node, SampleInstant::receive_first);
      const auto tf = occupancy_distribution(rep, node, SampleInstant::transmit_first);
      std::vector<double> by_s(static_cast<std::size_t>(rep.nodes[i].M * rep.nodes[i].K) + 1, 0.0);
      for (std::size_t k = 0; k < rf.size(); ++k) by_s[static_cast<std::size_t>(rf.states()[k].s)] += rf.probabilities()[k];
      n["occupancy_s_rf"] = by_s;
      n["occupancy_rf"] = state_table_json(rf);
      n["occupancy_tf"] = state_table_json(tf);
    }
    nodes.push_back(n);
  }
  j["nodes"] = nodes;
  return j;
}

// ---- CSV tables ---------------------------------------------------------

inline std::string delay_pmf_csv(const Pmf& d) {
  std::ostringstream out;
  out << "delay_epochs,probability\n";
  if (d.empty()) return out.str();
  for (auto n = d.min_support(); n <= d.max_support(); ++n) out << n << ',' << format_double(d[n]) << '\n';
  return out.str();
}

inline std::string delay_compare_csv(const Pmf& est, const Pmf& sim) {
  std::ostringstream out;
  out << "delay_epochs,prob_est,prob_sim\n";
  if (est.empty() && sim.empty()) return out.str();
  const auto lo = est.empty() ? sim.min_support() : sim.empty() ? est.min_support()
                                                                : std::min(est.min_support(), sim.min_support());
  const auto hi = est.empty() ? sim.max_support() : sim.empty() ? est.max_support()
                                                                : std::max(est.max_support(), sim.max_support());
  for (auto n = lo; n <= hi; ++n) out << n << ',' << format_double(est[n]) << ',' << format_double(sim[n]) << '\n';
  return out.str();
}

inline std::string delay_samples_csv(const std::vector<DelaySample>& samples) {
  std::ostringstream out;
  out << "block_id,start_epoch,end_epoch,delay\n";
  for (const auto& s : samples) out << s.block_id << ',' << s.start_epoch << ',' << s.end_epoch << ',' << s.delay << '\n';
  return out.str();
}

// ---- commands -----------------------------------------------------------

inline json header(const RunSpec& spec, const NetworkConfig& net) {
  return {{"format_version", kFormatVersion}, {"command", to_string(spec.command)}, {"network", network_json(net)}};
}

inline CommandResult cmd_estimate(const RunSpec& spec) {
  const auto sol = solve_fixed_point(spec.network, spec.estimator_options());
  CommandResult res;
  res.report = header(spec, spec.network);
  res.report.update(solution_json(sol));
  return res;
}

inline CommandResult cmd_delay(const RunSpec& spec) {
  const auto sol = solve_fixed_point(spec.network, spec.estimator_options());
  const auto prof = block_delay_dist(sol, spec.tail_tolerance);
  CommandResult res;
  res.report = header(spec, spec.network);
  res.report.update(solution_json(sol));
  res.report["delay"] = {{"mean", prof.mean},
                         {"std", prof.stddev},
                         {"total_mass", prof.D.total_mass()},
                         {"tail_tolerance", spec.tail_tolerance}};
  res.files.push_back({"delay_pmf.csv", delay_pmf_csv(prof.D)});
  return res;
}

inline SimConfig sim_settings(const RunSpec& spec) {
  SimConfig sim = spec.sim.value_or(SimConfig{});
  sim.record_samples = true;
  return sim;
}

inline CommandResult cmd_simulate(const RunSpec& spec) {
  const SimConfig sim = sim_settings(spec);
  std::vector<SimReport> parts;
  CommandResult res;
  for (int k = 0; k < sim.replications; ++k) {
    const auto seed = CounterRng::replication_seed(sim.seed, static_cast<std::uint64_t>(k));
    parts.push_back(run_replication(spec.network, sim, seed));
    const std::string tag = "replication_" + std::to_string(k);
    res.files.push_back({tag + ".json", sim_report_json(parts.back()).dump(2) + "\n"});
    res.files.push_back({tag + "_delays.csv", delay_samples_csv(parts.back().samples)});
  }
  SimReport merged = merge_reports(parts);
  merged.sim = sim;
  res.report = header(spec, spec.network);
  res.report.update(sim_report_json(merged));
  res.files.push_back({"report.json", res.report.dump(2) + "\n"});
  return res;
}

inline CommandResult cmd_compare(const RunSpec& spec) {
  const auto sol = solve_fixed_point(spec.network, spec.estimator_options());
  SimConfig sim = sim_settings(spec);
  sim.record_samples = false;
  const auto rep = run_simulation(spec.network, sim);

  CommandResult res;
  json& j = res.report = header(spec, spec.network);
  const double est = throughput(sol);
  j["throughput_est"] = est;
  j["throughput_sim"] = rep.throughput;
  j["throughput_sim_standard_error"] = rep.throughput_standard_error();
  j["abs_diff"] = std::abs(est - rep.throughput);
  j["iterations"] = sol.iterations;

  Pmf est_delay;
  try {
    const auto prof = block_delay_dist(sol, spec.tail_tolerance);
    est_delay = prof.D;
    j["delay_mean_est"] = prof.mean;
    j["delay_std_est"] = prof.stddev;
  } catch (const DomainError& e) {
    j["delay_error"] = e.what();
  }
  const Pmf sim_delay = rep.delay_pmf();
  if (!sim_delay.empty()) {
    const auto m = moments(sim_delay);
    j["delay_mean_sim"] = m.mean;
    j["delay_std_sim"] = m.stddev;
    j["delay_blocks_sim"] = rep.delay_blocks();
    if (!est_delay.empty()) j["delay_tv_distance"] = total_variation(est_delay, sim_delay);
  }

  json occ = json::array();
  for (int node = 1; node < spec.network.hops(); ++node) {
    occ.push_back({{"node", node},
                   {"blocking_est", sol.blocking(node)},
                   {"blocking_sim", rep.nodes[static_cast<std::size_t>(node - 1)].blocking_freq()},
                   {"rf_tv", state_total_variation(sol.rf_of(node),
                                                   occupancy_distribution(rep, node, SampleInstant::receive_first))},
                   {"tf_tv", state_total_variation(sol.tf_of(node),
                                                   occupancy_distribution(rep, node, SampleInstant::transmit_first))}});
  }
  j["occupancy_tv"] = occ;
  res.files.push_back({"delay_profile.csv", delay_compare_csv(est_delay, sim_delay)});
  return res;
}

// One row per sweep value. Simulation columns are filled only when the run
// config carries sim settings; columns that do not apply are left empty.
inline CommandResult cmd_sweep(const RunSpec& spec) {
  if (!spec.sweep) throw ConfigError("sweep command needs a \"sweep\" axis");
  CommandResult res;
  res.report = header(spec, spec.network);
  res.report["sweep"] = {{"param", spec.sweep->param}, {"values", spec.sweep->values}};
  json rows = json::array();
  std::ostringstream csv;
  csv << "m,K,eps,throughput_est,throughput_sim,delay_mean_est,delay_mean_sim\n";

  for (double value : spec.sweep->values) {
    const NetworkConfig net = apply_sweep_value(spec, value);
    json row = {{"value", value}, {"network", network_json(net)}};
    const auto sol = solve_fixed_point(net, spec.estimator_options());
    row["throughput_est"] = throughput(sol);
    row["iterations"] = sol.iterations;
    std::string delay_est;
    try {
      const auto prof = block_delay_dist(sol, spec.tail_tolerance);
      row["delay_mean_est"] = prof.mean;
      delay_est = format_double(prof.mean);
    } catch (const DomainError& e) {
      row["delay_error"] = e.what();
    }
    std::string thr_sim, delay_sim;
    if (spec.sim) {
      SimConfig sim = *spec.sim;
      sim.record_samples = false;
      const auto rep = run_simulation(net, sim);
      row["throughput_sim"] = rep.throughput;
      row["throughput_sim_standard_error"] = rep.throughput_standard_error();
      thr_sim = format_double(rep.throughput);
      if (rep.delay_blocks() > 0) {
        const double m = moments(rep.delay_pmf()).mean;
        row["delay_mean_sim"] = m;
        delay_sim = format_double(m);
      }
    }
    rows.push_back(row);

    const bool uniform_m = std::all_of(net.blocks.begin(), net.blocks.end(), [&](int b) { return b == net.blocks.front(); });
    const bool uniform_eps =
        std::all_of(net.erasures.begin(), net.erasures.end(), [&](double e) { return e == net.erasures.front(); });
    csv << (uniform_m ? std::to_string(net.blocks.front() * net.K) : "") << ',' << net.K << ','
        << (uniform_eps ? format_double(net.erasures.front()) : "") << ',' << format_double(throughput(sol)) << ','
        << thr_sim << ',' << delay_est << ',' << delay_sim << '\n';
  }
  res.report["points"] = rows;
  res.files.push_back({"sweep.csv", csv.str()});
  return res;
}

inline CommandResult run_command(const RunSpec& spec) {
  switch (spec.command) {
    case Command::estimate: return cmd_estimate(spec);
    case Command::delay: return cmd_delay(spec);
    case Command::simulate: return cmd_simulate(spec);
    case Command::compare: return cmd_compare(spec);
    case Command::sweep: return cmd_sweep(spec);
  }
  throw ConfigError("unknown command");
}

// Each file is written to a temporary name and renamed into place.
inline void write_outputs(const std::filesystem::path& dir, const std::vector<OutputFile>& files) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (const auto& f : files) {
    const fs::path target = dir / f.name;
    const fs::path tmp = dir / (f.name + ".tmp");
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw IoError("cannot write " + tmp.string());
      out << f.content;
      if (!out) throw IoError("cannot write " + tmp.string());
    }
    fs::rename(tmp, target, ec);
    if (ec) throw IoError("cannot move " + tmp.string() + " into place: " + ec.message());
  }
}

}  // namespace blockrlc
