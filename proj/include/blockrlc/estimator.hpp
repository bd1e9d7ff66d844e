#pragma once

// Fixed-point estimation of arrival rates and blocking probabilities along a
// finite-buffer erasure line network v_0 -> v_1 -> ... -> v_h.
//
// Node v_i (1 <= i <= h-1) is modelled by its own pair of buffer chains driven
// by its innovative arrival rate r_i, the erasure of its outgoing link and the
// blocking probability of v_{i+1}. The chains feed back
//
//   p_b[i]   = sum_t P_i^RF(M_i K, t)
//   r[i + 1] = (1 - sum_t P_i^TF(t, t)) (1 - eps[i + 1])
//
// with r_1 = 1 - eps_1 and p_b[h] = 0, until the vectors stop moving.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <future>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "blockrlc/chain.hpp"
#include "blockrlc/error.hpp"

namespace blockrlc {

struct NetworkConfig {
  std::vector<double> erasures;  // eps_1 .. eps_h
  std::vector<int> blocks;       // M_1 .. M_{h-1}
  int K = 1;

  int hops() const noexcept { return static_cast<int>(erasures.size()); }
  // 1-based link / node accessors.
  double eps(int link) const { return erasures.at(static_cast<std::size_t>(link - 1)); }
  int M(int node) const { return blocks.at(static_cast<std::size_t>(node - 1)); }
  int buffer_packets(int node) const { return M(node) * K; }

  double min_cut() const { return 1.0 - *std::max_element(erasures.begin(), erasures.end()); }

  void validate() const {
    if (erasures.size() < 2) throw DomainError("a line network needs at least 2 hops");
    if (blocks.size() + 1 != erasures.size()) {
      throw DomainError("expected h-1 buffer entries for h = " + std::to_string(erasures.size()));
    }
    for (double e : erasures) {
      if (!(e >= 0.0 && e <= 1.0)) throw DomainError("erasure probability outside [0,1]");
    }
    for (int m : blocks) {
      if (m < 1) throw DomainError("every intermediate node needs at least one block");
    }
    if (K < 1) throw DomainError("block size must be at least 1");
  }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

enum class UpdateSchedule {
  jacobi,        // every node from the previous iterate
  gauss_seidel,  // sweep source to sink, reusing this sweep's upstream rates
};

struct EstimatorOptions {
  double tol = 1e-9;
  int max_iter = 10'000;
  UpdateSchedule schedule = UpdateSchedule::jacobi;
  double chain_tol = 1e-12;
  // Solve the per-node chains of one iteration on worker threads.
  bool parallel = false;
  // Starting arrival rates r_2..r_h (r_1 is pinned to 1 - eps_1); defaults
  // to 1 - eps_i.
  std::optional<std::vector<double>> initial_rates;
  // Iterations with a non-decreasing residual before damping switches on.
  int oscillation_window = 50;
  double damping = 0.5;
};

struct Solution {
  NetworkConfig config;
  std::vector<double> r;    // r_1 .. r_h
  std::vector<double> p_b;  // p_b1 .. p_bh
  std::vector<StationaryDist> rf;  // nodes v_1 .. v_{h-1}
  std::vector<StationaryDist> tf;
  int iterations = 0;
  double residual = 0.0;
  bool damped = false;

  // 1-based accessors matching the network indexing.
  double rate(int i) const { return r.at(static_cast<std::size_t>(i - 1)); }
  double blocking(int i) const { return p_b.at(static_cast<std::size_t>(i - 1)); }
  const StationaryDist& rf_of(int node) const { return rf.at(static_cast<std::size_t>(node - 1)); }
  const StationaryDist& tf_of(int node) const { return tf.at(static_cast<std::size_t>(node - 1)); }
};

class ConvergenceError : public SolverError {
 public:
  ConvergenceError(const std::string& what, double residual, int iterations, std::vector<double> r,
                   std::vector<double> p_b)
      : SolverError(what, residual), iterations_(iterations), r_(std::move(r)), p_b_(std::move(p_b)) {}

  int iterations() const noexcept { return iterations_; }
  const std::vector<double>& r() const noexcept { return r_; }
  const std::vector<double>& p_b() const noexcept { return p_b_; }

 private:
  int iterations_;
  std::vector<double> r_, p_b_;
};

// Probability that the node is full when the upstream packet lands.
inline double blocking_probability(const StationaryDist& rf, int M, int K) {
  double p = 0.0;
  for (int t = 0; t < K; ++t) p += rf(M * K, t);
  return std::clamp(p, 0.0, 1.0);
}

// Innovative arrival rate seen by the next node: the node has something new
// to send unless it sits in one of the (t, t) states.
inline double arrival_rate_next(const StationaryDist& tf, double eps_next, int K) {
  double idle = 0.0;
  for (int t = 0; t < K; ++t) idle += tf(t, t);
  return std::clamp(1.0 - idle, 0.0, 1.0) * (1.0 - eps_next);
}

namespace detail {

struct NodeChains {
  StationaryDist rf;
  StationaryDist tf;
};

inline NodeChains solve_node(const NodeParams& p, double chain_tol) {
  return {steady_state(build_rfmc(p), chain_tol), steady_state(build_tfmc(p), chain_tol)};
}

}  // namespace detail

inline Solution solve_fixed_point(const NetworkConfig& config, const EstimatorOptions& opt = {}) {
  config.validate();
  if (!(opt.tol > 0.0)) throw DomainError("fixed-point tolerance must be positive");
  const int h = config.hops();
  const int K = config.K;

  // 0-based storage: r[i-1] = r_i, p_b[i-1] = p_bi.
  std::vector<double> r(h), p_b(h, 0.0);
  for (int i = 0; i < h; ++i) r[i] = 1.0 - config.erasures[i];
  if (opt.initial_rates) {
    if (static_cast<int>(opt.initial_rates->size()) != h - 1) {
      throw DomainError("initial_rates must hold r_2 .. r_h");
    }
    for (int i = 1; i < h; ++i) r[i] = std::clamp((*opt.initial_rates)[i - 1], 0.0, 1.0 - config.erasures[i]);
  }

  std::vector<detail::NodeChains> chains(h - 1);
  auto params_of = [&](int node, const std::vector<double>& rates, const std::vector<double>& blocking) {
    // node is 1-based, v_node has outgoing link node + 1.
    return NodeParams{rates[node - 1], config.erasures[node], blocking[node], config.M(node), K};
  };

  bool damped = false;
  int rising = 0;
  double prev_residual = std::numeric_limits<double>::infinity();
  double residual = std::numeric_limits<double>::infinity();

  for (int iter = 1; iter <= opt.max_iter; ++iter) {
    std::vector<double> r_new(h), pb_new(h, 0.0);
    r_new[0] = 1.0 - config.erasures[0];

    if (opt.schedule == UpdateSchedule::jacobi) {
      if (opt.parallel && h > 2) {
        std::vector<std::future<detail::NodeChains>> jobs;
        for (int node = 1; node < h; ++node) {
          jobs.push_back(std::async(std::launch::async, detail::solve_node, params_of(node, r, p_b), opt.chain_tol));
        }
        for (int node = 1; node < h; ++node) chains[node - 1] = jobs[node - 1].get();
      } else {
        for (int node = 1; node < h; ++node) chains[node - 1] = detail::solve_node(params_of(node, r, p_b), opt.chain_tol);
      }
      for (int node = 1; node < h; ++node) {
        pb_new[node - 1] = blocking_probability(chains[node - 1].rf, config.M(node), K);
        r_new[node] = arrival_rate_next(chains[node - 1].tf, config.erasures[node], K);
      }
    } else {
      // Upstream rates come from this sweep, downstream blocking from the last.
      for (int node = 1; node < h; ++node) {
        chains[node - 1] = detail::solve_node(params_of(node, r_new, p_b), opt.chain_tol);
        pb_new[node - 1] = blocking_probability(chains[node - 1].rf, config.M(node), K);
        r_new[node] = arrival_rate_next(chains[node - 1].tf, config.erasures[node], K);
      }
    }

    residual = 0.0;
    for (int i = 0; i < h; ++i) {
      residual = std::max(residual, std::abs(r_new[i] - r[i]));
      residual = std::max(residual, std::abs(pb_new[i] - p_b[i]));
    }

    if (residual < opt.tol) {
      Solution sol;
      sol.config = config;
      sol.r = std::move(r_new);
      sol.p_b = std::move(pb_new);
      for (auto& c : chains) {
        sol.rf.push_back(std::move(c.rf));
        sol.tf.push_back(std::move(c.tf));
      }
      sol.iterations = iter;
      sol.residual = residual;
      sol.damped = damped;
      return sol;
    }

    rising = residual >= prev_residual ? rising + 1 : 0;
    prev_residual = residual;
    if (!damped && rising >= opt.oscillation_window) damped = true;

    if (damped) {
      for (int i = 0; i < h; ++i) {
        r[i] = opt.damping * r[i] + (1.0 - opt.damping) * r_new[i];
        p_b[i] = opt.damping * p_b[i] + (1.0 - opt.damping) * pb_new[i];
      }
      r[0] = r_new[0];
    } else {
      r = std::move(r_new);
      p_b = std::move(pb_new);
    }
  }

  std::ostringstream msg;
  msg << "fixed point did not converge in " << opt.max_iter << " iterations (residual " << residual << ")";
  throw ConvergenceError(msg.str(), residual, opt.max_iter, r, p_b);
}

// Estimated end-to-end throughput, packets per epoch: r_h (the sink never blocks).
inline double throughput(const Solution& sol) { return sol.r.back(); }

// Erasure of link i inflated by blocking at its receiver; the sink never blocks.
inline double effective_erasure(const Solution& sol, int link) {
  const int h = sol.config.hops();
  if (link < 1 || link > h) throw DomainError("link index out of range");
  const double eps = sol.config.eps(link);
  if (link == h) return eps;
  return eps + sol.blocking(link) * (1.0 - eps);
}

}  // namespace blockrlc
