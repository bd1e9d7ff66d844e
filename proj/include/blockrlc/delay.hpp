#pragma once

// Block-delay distribution from a converged fixed point.
//
// The delay of a block is composed hop by hop as
//
//   D = T_1 ⊗ W_1 ⊗ ... ⊗ W_{h-2} ⊗ F
//
// T_1  epochs until the source's first packet of the block reaches v_1,
// W_i  epochs from v_i storing the block's first packet until that packet
//      is conveyed to v_{i+1},
// F    epochs from v_{h-1} storing the first packet until all K packets of
//      the block have reached the sink.

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "blockrlc/chain.hpp"
#include "blockrlc/error.hpp"
#include "blockrlc/estimator.hpp"
#include "blockrlc/pmf.hpp"

namespace blockrlc {

struct DelayProfile {
  Pmf D;
  Pmf T1;
  std::vector<Pmf> W;  // W_1 .. W_{h-2}
  Pmf F;
  double mean = 0.0;
  double stddev = 0.0;
};

struct LastHopRates {
  double P_in = 0.0;   // innovative arrival probability at v_{h-1}
  double P_out = 0.0;  // 1 - eps_h
};

// Probability that an arriving packet finds s packets stored.
inline double marginal_occupancy(const StationaryDist& rf, int s, int K) {
  double acc = 0.0;
  for (int t = 0; t <= std::min(K - 1, s); ++t) acc += rf(s, t);
  return acc;
}

// State seen by the first packet of a block: only occupancies that are whole
// multiples of K below capacity are possible, renormalized over those.
inline StateDistribution first_packet_state_dist(const StationaryDist& rf, int M, int K) {
  double denom = 0.0;
  for (int d = 0; d < M; ++d) denom += marginal_occupancy(rf, d * K, K);
  if (!(denom > 0.0)) throw DomainError("first-packet conditioning impossible");
  auto states = enumerate_states(M, K);
  std::vector<double> probs(states.size(), 0.0);
  for (std::size_t k = 0; k < states.size(); ++k) {
    const auto [s, t] = states[k];
    if (s % K == 0 && s < M * K) probs[k] = rf(s, t) / denom;
  }
  return {std::move(states), std::move(probs)};
}

// Epochs until the first packet of a new block is conveyed when it finds the
// buffer at (s, t) with s = nK: the (n-1)K + (K - t) packets ahead of it leave
// first, one geometric conveyance each.
inline Pmf service_start_dist(int s, int t, double eff_erasure, int K,
                              double tail_tolerance = kDefaultTailTolerance) {
  if (K < 1 || s < 0 || s % K != 0) throw DomainError("service start needs s to be a multiple of K");
  if (t < 0 || t > K - 1 || (s == 0 && t != 0)) throw DomainError("service start: invalid t");
  const int factors = s == 0 ? 1 : (s / K - 1) * K + (K + 1 - t);
  const double share = tail_tolerance / factors;
  return convolve_n(Pmf::geometric(eff_erasure, share), factors, share);
}

// Completion time of y conveyances when x of those packets have not arrived
// yet. Arrivals and departures are independent Bernoulli(P_in), Bernoulli(P_out)
// per epoch; a packet cannot leave in the epoch it arrives. Results are
// memoized per (x, y).
class CompletionTimeTable {
 public:
  explicit CompletionTimeTable(LastHopRates rates, double tail_tolerance = kDefaultTailTolerance)
      : rates_(rates), tail_(tail_tolerance) {
    const double pi = rates.P_in, po = rates.P_out;
    if (!(pi >= 0.0 && pi <= 1.0 && po >= 0.0 && po <= 1.0)) throw DomainError("rates outside [0,1]");
    p1_ = po * (1.0 - pi);
    p2_ = pi * (1.0 - po);
    p3_ = pi * po;
    p4_ = (1.0 - pi) * (1.0 - po);
    if (!(p1_ + p2_ + p3_ > 0.0)) throw DomainError("no progress possible");
  }

  const Pmf& operator()(int x, int y) {
    if (x < 0 || x > y) throw DomainError("completion time needs 0 <= x <= y");
    if (auto it = memo_.find({x, y}); it != memo_.end()) return it->second;
    Pmf v;
    if (x == 0) {
      v = y == 0 ? Pmf::delta(0) : convolve_n(Pmf::geometric(1.0 - rates_.P_out, tail_), y, tail_);
    } else if (x == y) {
      v = convolve(Pmf::geometric(1.0 - rates_.P_in, tail_), (*this)(x - 1, x), tail_);
    } else {
      const double total = p1_ + p2_ + p3_;
      const double w[] = {p1_ / total, p2_ / total, p3_ / total};
      const Pmf parts[] = {(*this)(x, y - 1), (*this)(x - 1, y), (*this)(x - 1, y - 1)};
      v = convolve(mix(w, parts), Pmf::geometric(p4_, tail_), tail_);
    }
    return memo_.emplace(std::pair{x, y}, std::move(v)).first->second;
  }

  LastHopRates rates() const noexcept { return rates_; }
  double p1() const noexcept { return p1_; }
  double p2() const noexcept { return p2_; }
  double p3() const noexcept { return p3_; }
  double p4() const noexcept { return p4_; }
  double tail_tolerance() const noexcept { return tail_; }

 private:
  LastHopRates rates_;
  double tail_;
  double p1_, p2_, p3_, p4_;
  std::map<std::pair<int, int>, Pmf> memo_;
};

// V(x, y) composes at most x + 2y geometric factors along any path; each gets
// an equal share of the tolerance.
inline Pmf v_dist(int x, int y, LastHopRates rates, double tail_tolerance = kDefaultTailTolerance) {
  CompletionTimeTable table(rates, tail_tolerance / (x + 2 * y + 1));
  return table(x, y);
}

inline LastHopRates last_hop_rates(const Solution& sol) {
  const int h = sol.config.hops();
  return {sol.rate(h - 1), 1.0 - sol.config.eps(h)};
}

// Evaluation context for one converged solution; caches the completion-time
// table and the geometric convolution powers shared by many terms.
//
// The configured tail tolerance bounds the mass missing from D. It is split
// evenly over the geometric factors along the longest composition path
// (T_1, one power of up to M_i K + 1 factors per waiting time, up to
// M_{h-1} K factors plus a completion time of at most 3K factors for F).
class DelayCalculator {
 public:
  explicit DelayCalculator(const Solution& sol, double tail_tolerance = kDefaultTailTolerance)
      : sol_(sol), tail_(tail_tolerance) {
    const int h = sol.config.hops();
    if (h < 2) throw DomainError("delay needs h >= 2");
    const int K = sol.config.K;
    int factors = 1 + sol.config.M(h - 1) * K + 3 * K;
    for (int i = 1; i <= h - 2; ++i) factors += sol.config.M(i) * K + 1;
    tail_ = tail_tolerance / factors;
  }

  Pmf waiting_time(int i) {
    const int h = sol_.config.hops();
    if (i < 1 || i > h - 2) throw DomainError("waiting time is defined for nodes 1 .. h-2");
    const int K = sol_.config.K, M = sol_.config.M(i);
    const auto pi = first_packet_state_dist(sol_.rf_of(i), M, K);
    // Departures from v_i use link i + 1.
    const double eff = effective_erasure(sol_, i + 1);
    const auto powers = convolution_powers(Pmf::geometric(eff, tail_), M * K + 1, tail_);
    std::vector<double> weights;
    std::vector<Pmf> parts;
    for (std::size_t k = 0; k < pi.size(); ++k) {
      const double w = pi.probabilities()[k];
      if (w == 0.0) continue;
      const auto [s, t] = pi.states()[k];
      const int n = s / K;
      weights.push_back(w);
      parts.push_back(s == 0 ? powers[1] : powers[(n - 1) * K + (K + 1 - t)]);
    }
    return mix(weights, parts);
  }

  Pmf last_hop_conditional(int s, int t) {
    const int K = sol_.config.K;
    if (K < 1 || s < 0 || s % K != 0) throw DomainError("last hop needs s to be a multiple of K");
    if (t < 0 || t > K - 1 || (s == 0 && t != 0)) throw DomainError("last hop: invalid t");
    auto& v = table();
    if (s == 0) return v(K - 1, K);
    const int alpha = (s / K - 1) * K + (K - t);
    const int beta = last_hop_beta(alpha);
    return convolve(geometric_power_last(alpha), v(K - beta, K), tail_);
  }

  int last_hop_beta(int alpha) {
    const auto rates = last_hop_rates(sol_);
    if (!(rates.P_out > 0.0)) throw DomainError("dead last link");
    const double expected = std::floor(alpha * rates.P_in / rates.P_out);
    return static_cast<int>(std::min<double>(sol_.config.K - 1, expected));
  }

  Pmf final_hop() {
    const int h = sol_.config.hops();
    const int K = sol_.config.K, M = sol_.config.M(h - 1);
    const auto pi = first_packet_state_dist(sol_.rf_of(h - 1), M, K);
    std::vector<double> weights;
    std::vector<Pmf> parts;
    for (std::size_t k = 0; k < pi.size(); ++k) {
      const double w = pi.probabilities()[k];
      if (w == 0.0) continue;
      const auto [s, t] = pi.states()[k];
      weights.push_back(w);
      parts.push_back(last_hop_conditional(s, t));
    }
    return mix(weights, parts);
  }

  DelayProfile block_delay() {
    const int h = sol_.config.hops();
    DelayProfile out;
    out.T1 = Pmf::geometric(effective_erasure(sol_, 1), tail_);
    Pmf acc = out.T1;
    for (int i = 1; i <= h - 2; ++i) {
      out.W.push_back(waiting_time(i));
      acc = convolve(acc, out.W.back(), tail_);
    }
    out.F = final_hop();
    out.D = convolve(acc, out.F, tail_);
    const auto m = moments(out.D);
    out.mean = m.mean;
    out.stddev = m.stddev;
    return out;
  }

  CompletionTimeTable& table() {
    if (!table_) table_.emplace(last_hop_rates(sol_), tail_);
    return *table_;
  }

 private:
  const Pmf& geometric_power_last(int alpha) {
    const int needed = alpha;
    if (static_cast<int>(last_powers_.size()) <= needed) {
      last_powers_ = convolution_powers(Pmf::geometric(sol_.config.eps(sol_.config.hops()), tail_),
                                        std::max(needed, sol_.config.M(sol_.config.hops() - 1) * sol_.config.K),
                                        tail_);
    }
    return last_powers_[static_cast<std::size_t>(needed)];
  }

  const Solution& sol_;
  double tail_;  // per-factor share
  std::optional<CompletionTimeTable> table_;
  std::vector<Pmf> last_powers_;
};

inline Pmf waiting_time_dist(const Solution& sol, int i, double tail_tolerance = kDefaultTailTolerance) {
  return DelayCalculator(sol, tail_tolerance).waiting_time(i);
}

inline Pmf last_hop_conditional(int s, int t, const Solution& sol, double tail_tolerance = kDefaultTailTolerance) {
  return DelayCalculator(sol, tail_tolerance).last_hop_conditional(s, t);
}

inline Pmf final_hop_dist(const Solution& sol, double tail_tolerance = kDefaultTailTolerance) {
  return DelayCalculator(sol, tail_tolerance).final_hop();
}

inline DelayProfile block_delay_dist(const Solution& sol, double tail_tolerance = kDefaultTailTolerance) {
  return DelayCalculator(sol, tail_tolerance).block_delay();
}

}  // namespace blockrlc
