#pragma once

// Per-node buffer Markov chains.
//
// A node's buffer is summarized by (s, t): s innovative packets stored across
// the blocks that are not yet fully conveyed, t innovative packets of the
// current (oldest) block already conveyed downstream. One epoch consists of
// two independent events:
//
//   A  an innovative packet arrives              P(A) = r_in
//   C  the transmitted packet is conveyed        P(C) = (1 - eps_out)(1 - pb_next)
//
// transmit: if s > t and C then t += 1; t == K completes the block, so
//           (s, t) -> (s - K, 0) and K slots are freed.
// receive:  if A and s < MK then s += 1, otherwise the arrival is lost.
//
// The transmit-first chain (TFMC) applies transmit then receive and is
// observed after the receive; the receive-first chain (RFMC) applies receive
// then transmit and is observed after the transmit.

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstddef>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "blockrlc/error.hpp"

namespace blockrlc {

struct BufferState {
  int s = 0;
  int t = 0;

  friend auto operator<=>(const BufferState&, const BufferState&) = default;
};

// All (s, t) with 0 <= s <= MK and 0 <= t <= min(K-1, s), s major.
inline std::vector<BufferState> enumerate_states(int M, int K) {
  if (M < 1 || K < 1) throw DomainError("state space needs M >= 1 and K >= 1");
  std::vector<BufferState> states;
  for (int s = 0; s <= M * K; ++s) {
    for (int t = 0; t <= std::min(K - 1, s); ++t) states.push_back({s, t});
  }
  return states;
}

// Index of (s, t) in enumerate_states(M, K).
inline std::size_t state_index(BufferState x, int K) {
  // Rows s < K hold s + 1 states each, later rows hold K.
  const int full_rows = std::min(x.s, K);
  std::size_t base = static_cast<std::size_t>(full_rows) * (full_rows + 1) / 2;
  if (x.s > K) base += static_cast<std::size_t>(x.s - K) * K;
  return base + static_cast<std::size_t>(x.t);
}

struct NodeParams {
  double r_in = 0.0;     // innovative arrival probability per epoch
  double eps_out = 0.0;  // erasure on the outgoing link
  double pb_next = 0.0;  // blocking probability of the next hop
  int M = 1;             // buffer size in blocks
  int K = 1;             // packets per block

  double conveyance() const { return (1.0 - eps_out) * (1.0 - pb_next); }

  void validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(r_in) || !prob(eps_out) || !prob(pb_next)) throw DomainError("node probability outside [0,1]");
    if (M < 1 || K < 1) throw DomainError("node needs M >= 1 and K >= 1");
  }
};

// Probability distribution over a list of buffer states. States are stored in
// lexicographic order so lookups are a binary search.
class StateDistribution {
 public:
  StateDistribution() = default;
  StateDistribution(std::vector<BufferState> states, std::vector<double> probs)
      : states_(std::move(states)), probs_(std::move(probs)) {
    if (states_.size() != probs_.size()) throw DomainError("state distribution size mismatch");
    if (!std::is_sorted(states_.begin(), states_.end())) throw DomainError("states must be sorted");
  }

  // Uniform law over every state of an (M, K) buffer.
  static StateDistribution uniform(int M, int K) {
    auto states = enumerate_states(M, K);
    std::vector<double> p(states.size(), 1.0 / static_cast<double>(states.size()));
    return {std::move(states), std::move(p)};
  }

  // Unit mass on `at` over the (M, K) state space.
  static StateDistribution point(int M, int K, BufferState at) {
    auto states = enumerate_states(M, K);
    std::vector<double> p(states.size(), 0.0);
    auto it = std::lower_bound(states.begin(), states.end(), at);
    if (it == states.end() || *it != at) throw DomainError("point mass outside the state space");
    p[static_cast<std::size_t>(it - states.begin())] = 1.0;
    return {std::move(states), std::move(p)};
  }

  double operator()(int s, int t) const { return (*this)(BufferState{s, t}); }
  double operator()(BufferState x) const {
    auto it = std::lower_bound(states_.begin(), states_.end(), x);
    if (it == states_.end() || *it != x) return 0.0;
    return probs_[static_cast<std::size_t>(it - states_.begin())];
  }

  std::size_t size() const noexcept { return states_.size(); }
  const std::vector<BufferState>& states() const noexcept { return states_; }
  const std::vector<double>& probabilities() const noexcept { return probs_; }
  double total() const {
    double acc = 0.0;
    for (double p : probs_) acc += p;
    return acc;
  }

  friend bool operator==(const StateDistribution&, const StateDistribution&) = default;

 private:
  std::vector<BufferState> states_;
  std::vector<double> probs_;
};

using StationaryDist = StateDistribution;

using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct StochasticMatrix {
  std::vector<BufferState> states;
  SparseRowMatrix transitions;

  std::size_t size() const noexcept { return states.size(); }

  double at(BufferState from, BufferState to) const {
    const auto i = find(from), j = find(to);
    if (i < 0 || j < 0) return 0.0;
    return transitions.coeff(i, j);
  }

  // Generic matrix; states are labelled (i, 0).
  static StochasticMatrix from_dense(const std::vector<std::vector<double>>& rows) {
    StochasticMatrix m;
    const auto n = static_cast<int>(rows.size());
    std::vector<Eigen::Triplet<double>> entries;
    for (int i = 0; i < n; ++i) {
      if (static_cast<int>(rows[i].size()) != n) throw DomainError("matrix is not square");
      m.states.push_back({i, 0});
      for (int j = 0; j < n; ++j) {
        if (rows[i][j] != 0.0) entries.emplace_back(i, j, rows[i][j]);
      }
    }
    m.transitions.resize(n, n);
    m.transitions.setFromTriplets(entries.begin(), entries.end());
    return m;
  }

  double max_row_error() const {
    double worst = 0.0;
    for (int i = 0; i < transitions.outerSize(); ++i) {
      double acc = 0.0;
      for (SparseRowMatrix::InnerIterator it(transitions, i); it; ++it) acc += it.value();
      worst = std::max(worst, std::abs(acc - 1.0));
    }
    return worst;
  }

 private:
  int find(BufferState x) const {
    auto it = std::lower_bound(states.begin(), states.end(), x);
    if (it == states.end() || *it != x) return -1;
    return static_cast<int>(it - states.begin());
  }
};

enum class ChainKind { transmit_first, receive_first };

namespace detail {

struct Outcome {
  BufferState next;
  double prob;
};

inline BufferState apply_transmit(BufferState x, bool conveyed, int K) {
  if (x.s > x.t && conveyed) {
    ++x.t;
    if (x.t == K) x = {x.s - K, 0};
  }
  return x;
}

inline BufferState apply_receive(BufferState x, bool arrived, int capacity) {
  if (arrived && x.s < capacity) ++x.s;
  return x;
}

// The four (arrival, conveyance) outcomes of one epoch.
inline std::array<Outcome, 4> epoch_outcomes(BufferState x, const NodeParams& p, ChainKind kind) {
  const double c = p.conveyance();
  const int capacity = p.M * p.K;
  std::array<Outcome, 4> out{};
  int k = 0;
  for (bool arrived : {false, true}) {
    for (bool conveyed : {false, true}) {
      const double prob = (arrived ? p.r_in : 1.0 - p.r_in) * (conveyed ? c : 1.0 - c);
      BufferState y = x;
      if (kind == ChainKind::transmit_first) {
        y = apply_receive(apply_transmit(y, conveyed, p.K), arrived, capacity);
      } else {
        y = apply_transmit(apply_receive(y, arrived, capacity), conveyed, p.K);
      }
      out[k++] = {y, prob};
    }
  }
  return out;
}

inline StochasticMatrix build_chain(const NodeParams& p, ChainKind kind) {
  p.validate();
  StochasticMatrix m;
  m.states = enumerate_states(p.M, p.K);
  const auto n = static_cast<int>(m.states.size());
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(m.states.size() * 4);
  for (int i = 0; i < n; ++i) {
    for (const auto& o : epoch_outcomes(m.states[i], p, kind)) {
      if (o.prob > 0.0) entries.emplace_back(i, static_cast<int>(state_index(o.next, p.K)), o.prob);
    }
  }
  m.transitions.resize(n, n);
  m.transitions.setFromTriplets(entries.begin(), entries.end());
  m.transitions.makeCompressed();
  return m;
}

// Closed communicating classes reachable from `start` (Tarjan on the support
// graph restricted to the reachable set).
inline std::vector<std::vector<int>> reachable_closed_classes(const SparseRowMatrix& P, int start) {
  const int n = static_cast<int>(P.rows());
  std::vector<int> index(n, -1), low(n, 0), comp(n, -1);
  std::vector<bool> on_stack(n, false);
  std::vector<int> stack;
  std::vector<std::vector<int>> components;
  int counter = 0;

  // Iterative Tarjan: frames hold (node, position in its row).
  struct Frame {
    int v;
    SparseRowMatrix::InnerIterator it;
  };
  std::vector<Frame> frames;
  auto open = [&](int v) {
    index[v] = low[v] = counter++;
    stack.push_back(v);
    on_stack[v] = true;
    frames.push_back({v, SparseRowMatrix::InnerIterator(P, v)});
  };
  open(start);
  while (!frames.empty()) {
    Frame& f = frames.back();
    if (f.it) {
      const int w = static_cast<int>(f.it.col());
      const bool edge = f.it.value() > 0.0;
      ++f.it;
      if (!edge) continue;
      if (index[w] < 0) {
        open(w);
      } else if (on_stack[w]) {
        low[f.v] = std::min(low[f.v], index[w]);
      }
      continue;
    }
    const int v = f.v;
    frames.pop_back();
    if (!frames.empty()) low[frames.back().v] = std::min(low[frames.back().v], low[v]);
    if (low[v] == index[v]) {
      std::vector<int> members;
      int w;
      do {
        w = stack.back();
        stack.pop_back();
        on_stack[w] = false;
        comp[w] = static_cast<int>(components.size());
        members.push_back(w);
      } while (w != v);
      components.push_back(std::move(members));
    }
  }

  std::vector<std::vector<int>> closed;
  for (std::size_t c = 0; c < components.size(); ++c) {
    bool leaves = false;
    for (int v : components[c]) {
      for (SparseRowMatrix::InnerIterator it(P, v); it && !leaves; ++it) {
        if (it.value() > 0.0 && comp[it.col()] != static_cast<int>(c)) leaves = true;
      }
    }
    if (!leaves) {
      std::sort(components[c].begin(), components[c].end());
      closed.push_back(std::move(components[c]));
    }
  }
  return closed;
}

inline double stationary_residual(const SparseRowMatrix& P, const Eigen::VectorXd& pi) {
  const Eigen::VectorXd diff = P.transpose() * pi - pi;
  return diff.cwiseAbs().maxCoeff();
}

}  // namespace detail

inline StochasticMatrix build_tfmc(const NodeParams& params) {
  return detail::build_chain(params, ChainKind::transmit_first);
}

inline StochasticMatrix build_rfmc(const NodeParams& params) {
  return detail::build_chain(params, ChainKind::receive_first);
}

// Stationary distribution of a row-stochastic matrix.
//
// The chain is restricted to the states reachable from states[0] (the empty
// buffer for chains built here). The unique closed class inside that set is
// solved directly: (P^T - I) pi = 0 with one equation replaced by sum(pi) = 1,
// falling back to power iteration when the factorization fails or misses the
// tolerance. Transient states get probability zero; an absorbing start state
// yields a point mass on it. Several reachable closed classes are an error.
inline StationaryDist steady_state(const StochasticMatrix& matrix, double tol = 1e-12) {
  const SparseRowMatrix& P = matrix.transitions;
  const int n = static_cast<int>(matrix.size());
  if (n == 0) throw DomainError("empty transition matrix");
  if (matrix.max_row_error() > 1e-9) throw DomainError("matrix is not row-stochastic");

  const auto closed = detail::reachable_closed_classes(P, 0);
  if (closed.size() != 1) {
    throw SolverError("steady_state: " + std::to_string(closed.size()) +
                          " closed classes reachable from the start state",
                      std::nan(""));
  }
  const std::vector<int>& cls = closed.front();
  const int m = static_cast<int>(cls.size());
  std::vector<int> local(n, -1);
  for (int k = 0; k < m; ++k) local[cls[k]] = k;

  // Transposed generator restricted to the class, last row -> normalization.
  std::vector<Eigen::Triplet<double>> entries;
  for (int k = 0; k < m; ++k) {
    for (SparseRowMatrix::InnerIterator it(P, cls[k]); it; ++it) {
      const int j = local[it.col()];
      if (j >= 0 && j != m - 1) entries.emplace_back(j, k, it.value());
    }
    if (k != m - 1) entries.emplace_back(k, k, -1.0);
    entries.emplace_back(m - 1, k, 1.0);
  }
  Eigen::SparseMatrix<double> A(m, m);
  A.setFromTriplets(entries.begin(), entries.end());
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m);
  rhs[m - 1] = 1.0;

  auto embed = [&](const Eigen::VectorXd& x) {
    Eigen::VectorXd pi = Eigen::VectorXd::Zero(n);
    double total = 0.0;
    for (int k = 0; k < m; ++k) {
      const double v = x[k] > 0.0 ? x[k] : 0.0;
      pi[cls[k]] = v;
      total += v;
    }
    if (total > 0.0) pi /= total;
    return pi;
  };

  Eigen::VectorXd pi;
  double residual = std::numeric_limits<double>::infinity();
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(A);
  if (lu.info() == Eigen::Success) {
    const Eigen::VectorXd x = lu.solve(rhs);
    if (lu.info() == Eigen::Success && x.allFinite()) {
      pi = embed(x);
      residual = detail::stationary_residual(P, pi);
    }
  }
  if (!(residual <= tol)) {
    // Power iteration on the lazy chain (P + I) / 2, which is aperiodic.
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    for (int v : cls) x[v] = 1.0 / m;
    const SparseRowMatrix Pt = P.transpose();
    for (int iter = 0; iter < 1'000'000; ++iter) {
      x = 0.5 * (Pt * x + x);
      if (iter % 64 == 0) {
        x /= x.sum();
        residual = detail::stationary_residual(P, x);
        if (residual <= tol) break;
      }
    }
    pi = x;
  }
  if (!(residual <= tol)) {
    std::ostringstream msg;
    msg << "steady_state: residual " << residual << " above tolerance " << tol;
    throw SolverError(msg.str(), residual);
  }
  return {matrix.states, std::vector<double>(pi.data(), pi.data() + n)};
}

}  // namespace blockrlc
