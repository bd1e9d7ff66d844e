#pragma once

// Epoch-driven simulation of block-based random linear coding over a line
// network with finite buffers, link erasures and instant per-block
// acknowledgments.
//
// Coding is tracked at the counter level: a packet carries CMB, the number of
// innovative packets of its block combined into it, and the receiver keeps
// INV, the number of innovative packets of its incoming block received so far.
// A reception is innovative iff CMB > INV; the K-th innovative reception
// acknowledges the block and the sender drops it, freeing K slots.
//
// Every epoch, each node sends one packet of its oldest block. Links are
// resolved from the sink back to the source, so a node's own transmission
// (and any resulting acknowledgment) happens before it admits the packet
// arriving from upstream in the same epoch.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numeric>
#include <string>
#include <vector>

#include "blockrlc/chain.hpp"
#include "blockrlc/error.hpp"
#include "blockrlc/estimator.hpp"
#include "blockrlc/pmf.hpp"

namespace blockrlc {

inline constexpr const char* kRngName = "splitmix64-counter/v1";

// Stateless generator: every (seed, link, epoch) triple owns an independent
// uniform draw, so runs do not depend on evaluation order.
struct CounterRng {
  std::uint64_t seed = 0;

  static constexpr std::uint64_t mix(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  double uniform(std::uint64_t stream, std::uint64_t counter) const noexcept {
    const std::uint64_t bits = mix(mix(mix(seed) ^ stream) ^ counter);
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
  }

  static std::uint64_t replication_seed(std::uint64_t base, std::uint64_t replication) noexcept {
    return mix(base ^ mix(replication));
  }
};

struct SimConfig {
  std::int64_t epochs = 1'000'000;
  std::int64_t warmup_blocks = 200;
  std::uint64_t seed = 1;
  int replications = 1;
  // Throughput and occupancy are measured over this trailing share of the horizon.
  double measure_fraction = 0.8;
  bool record_samples = false;

  void validate() const {
    if (epochs <= 0) throw DomainError("epochs must be positive");
    if (replications < 1) throw DomainError("replications must be at least 1");
    if (warmup_blocks < 0) throw DomainError("warmup_blocks must be non-negative");
    if (!(measure_fraction > 0.0 && measure_fraction <= 1.0)) throw DomainError("measure_fraction outside (0,1]");
  }

  std::int64_t window_start() const {
    return epochs - static_cast<std::int64_t>(std::llround(measure_fraction * static_cast<double>(epochs)));
  }

  friend bool operator==(const SimConfig&, const SimConfig&) = default;
};

struct DelaySample {
  std::int64_t block_id = 0;
  std::int64_t start_epoch = 0;
  std::int64_t end_epoch = 0;
  std::int64_t delay = 0;

  friend bool operator==(const DelaySample&, const DelaySample&) = default;
};

enum class SampleInstant {
  receive_first,   // after the node's transmission, before it receives
  transmit_first,  // end of epoch, after the node's reception
};

// Occupancy counts of one intermediate node, indexed like enumerate_states(M, K).
struct NodeOccupancy {
  int M = 1;
  int K = 1;
  std::vector<std::uint64_t> rf_counts;
  std::vector<std::uint64_t> tf_counts;
  std::uint64_t upstream_successes = 0;  // non-erased packets sent to this node
  std::uint64_t blocked = 0;             // of those, dropped because the node was full

  double blocking_freq() const {
    return upstream_successes == 0 ? 0.0
                                   : static_cast<double>(blocked) / static_cast<double>(upstream_successes);
  }

  friend bool operator==(const NodeOccupancy&, const NodeOccupancy&) = default;
};

struct SimReport {
  NetworkConfig net;
  SimConfig sim;
  std::string rng = kRngName;
  std::int64_t measured_epochs = 0;
  std::uint64_t delivered_packets = 0;  // K x blocks completed inside the window
  double throughput = 0.0;
  std::vector<std::pair<std::uint64_t, double>> replication_throughput;  // (seed, throughput)
  std::uint64_t blocks_started = 0;
  std::uint64_t blocks_completed = 0;
  std::vector<std::uint64_t> delay_counts;  // delay_counts[d] = blocks with delay d
  std::vector<DelaySample> samples;
  std::vector<NodeOccupancy> nodes;  // v_1 .. v_{h-1}

  std::uint64_t delay_blocks() const {
    return std::accumulate(delay_counts.begin(), delay_counts.end(), std::uint64_t{0});
  }

  Pmf delay_pmf() const {
    const auto total = delay_blocks();
    if (total == 0) return {};
    std::vector<double> mass(delay_counts.size());
    for (std::size_t d = 0; d < mass.size(); ++d) {
      mass[d] = static_cast<double>(delay_counts[d]) / static_cast<double>(total);
    }
    return Pmf(0, std::move(mass));
  }

  double throughput_standard_error() const {
    const auto n = replication_throughput.size();
    if (n < 2) return 0.0;
    double mean = 0.0;
    for (const auto& [_, x] : replication_throughput) mean += x;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (const auto& [_, x] : replication_throughput) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
  }

  friend bool operator==(const SimReport&, const SimReport&) = default;
};

// Empirical (s, t) distribution of intermediate node `node` (1-based).
inline StateDistribution occupancy_distribution(const SimReport& report, int node, SampleInstant instant) {
  if (node < 1 || node > static_cast<int>(report.nodes.size())) throw DomainError("unknown node index");
  const auto& occ = report.nodes[static_cast<std::size_t>(node - 1)];
  const auto& counts = instant == SampleInstant::receive_first ? occ.rf_counts : occ.tf_counts;
  const auto total = std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
  if (total == 0) throw DomainError("no occupancy samples recorded");
  std::vector<double> probs(counts.size());
  for (std::size_t k = 0; k < counts.size(); ++k) {
    probs[k] = static_cast<double>(counts[k]) / static_cast<double>(total);
  }
  return {enumerate_states(occ.M, occ.K), std::move(probs)};
}

// Commutative merge: counters add, per-replication entries are kept sorted and
// the merged report carries the smallest part seed.
inline SimReport merge_reports(const std::vector<SimReport>& parts) {
  if (parts.empty()) throw DomainError("nothing to merge");
  SimReport out = parts.front();
  out.samples.clear();
  out.replication_throughput.clear();
  out.measured_epochs = 0;
  out.delivered_packets = 0;
  out.blocks_started = out.blocks_completed = 0;
  out.delay_counts.clear();
  for (auto& n : out.nodes) {
    std::fill(n.rf_counts.begin(), n.rf_counts.end(), 0);
    std::fill(n.tf_counts.begin(), n.tf_counts.end(), 0);
    n.upstream_successes = n.blocked = 0;
  }
  for (const auto& p : parts) {
    if (p.nodes.size() != out.nodes.size()) throw DomainError("merging reports of different networks");
    out.measured_epochs += p.measured_epochs;
    out.delivered_packets += p.delivered_packets;
    out.blocks_started += p.blocks_started;
    out.blocks_completed += p.blocks_completed;
    if (p.delay_counts.size() > out.delay_counts.size()) out.delay_counts.resize(p.delay_counts.size(), 0);
    for (std::size_t d = 0; d < p.delay_counts.size(); ++d) out.delay_counts[d] += p.delay_counts[d];
    for (std::size_t i = 0; i < p.nodes.size(); ++i) {
      auto& dst = out.nodes[i];
      const auto& src = p.nodes[i];
      for (std::size_t k = 0; k < dst.rf_counts.size(); ++k) {
        dst.rf_counts[k] += src.rf_counts[k];
        dst.tf_counts[k] += src.tf_counts[k];
      }
      dst.upstream_successes += src.upstream_successes;
      dst.blocked += src.blocked;
    }
    out.replication_throughput.insert(out.replication_throughput.end(), p.replication_throughput.begin(),
                                      p.replication_throughput.end());
  }
  std::sort(out.replication_throughput.begin(), out.replication_throughput.end());
  for (const auto& p : parts) out.sim.seed = std::min(out.sim.seed, p.sim.seed);
  out.sim.replications = static_cast<int>(parts.size());
  out.throughput = out.measured_epochs == 0 ? 0.0
                                            : static_cast<double>(out.delivered_packets) /
                                                  static_cast<double>(out.measured_epochs);
  return out;
}

struct StoredBlock {
  std::int64_t id = 0;
  int received = 0;
};

// Intermediate node bookkeeping.
struct NodeSim {
  int capacity = 0;              // M K
  int stored = 0;                // s
  int conveyed_current = 0;      // t: innovative packets of the front block conveyed
  int inv_counter = 0;           // INV of the incoming block
  std::deque<StoredBlock> queue;  // front = block being served

  BufferState state() const { return {stored, conveyed_current}; }
};

class LineSimulator {
 public:
  LineSimulator(const NetworkConfig& net, const SimConfig& sim, std::uint64_t seed)
      : net_(net), sim_(sim), rng_{seed}, window_start_(sim.window_start()) {
    net.validate();
    sim.validate();
    const int h = net.hops();
    nodes_.resize(static_cast<std::size_t>(h - 1));
    report_.net = net;
    report_.sim = sim;
    report_.sim.seed = seed;
    report_.sim.replications = 1;
    for (int i = 1; i < h; ++i) {
      nodes_[i - 1].capacity = net.buffer_packets(i);
      NodeOccupancy occ;
      occ.M = net.M(i);
      occ.K = net.K;
      occ.rf_counts.assign(enumerate_states(occ.M, occ.K).size(), 0);
      occ.tf_counts = occ.rf_counts;
      report_.nodes.push_back(std::move(occ));
    }
    block_start_.push_back(0);
    report_.blocks_started = 1;
  }

  std::int64_t epoch() const noexcept { return epoch_; }
  const NodeSim& node(int i) const { return nodes_.at(static_cast<std::size_t>(i - 1)); }
  std::int64_t source_block() const noexcept { return source_block_; }
  std::int64_t sink_inv() const noexcept { return sink_inv_; }
  const SimReport& report() const noexcept { return report_; }

  // One synchronous epoch. `erased(link)` decides the fate of link 1..h;
  // the default draws from the counter generator.
  template <typename ErasureFn>
  void step(ErasureFn&& erased) {
    const int h = net_.hops();
    const int K = net_.K;
    const std::int64_t e = epoch_;
    const bool measuring = e >= window_start_;

    for (int link = h; link >= 1; --link) {
      const int sender = link - 1;
      const int receiver = link;
      const bool receiver_is_sink = receiver == h;

      if (!receiver_is_sink && measuring) {
        const auto& rx = nodes_[receiver - 1];
        report_.nodes[receiver - 1].rf_counts[state_index(rx.state(), K)]++;
      }

      int cmb = K;
      std::int64_t block_id = source_block_;
      if (sender > 0) {
        const auto& tx = nodes_[sender - 1];
        if (tx.queue.empty()) continue;
        cmb = tx.queue.front().received;
        block_id = tx.queue.front().id;
      }
      if (erased(link)) continue;

      int inv = 0;
      if (receiver_is_sink) {
        inv = static_cast<int>(sink_inv_);
      } else {
        auto& rx = nodes_[receiver - 1];
        auto& occ = report_.nodes[receiver - 1];
        if (measuring) occ.upstream_successes++;
        if (rx.stored == rx.capacity) {
          if (measuring) occ.blocked++;
          continue;
        }
        inv = rx.inv_counter;
      }
      if (cmb <= inv) continue;  // nothing new for the receiver

      // Innovative reception.
      bool acked = false;
      if (receiver_is_sink) {
        acked = ++sink_inv_ == K;
        if (acked) {
          sink_inv_ = 0;
          complete_block(block_id, e);
        }
      } else {
        auto& rx = nodes_[receiver - 1];
        if (rx.inv_counter == 0) {
          assert(rx.queue.empty() || rx.queue.back().id < block_id);
          rx.queue.push_back({block_id, 0});
        }
        assert(rx.queue.back().id == block_id);
        rx.queue.back().received++;
        rx.stored++;
        assert(rx.stored <= rx.capacity);
        acked = ++rx.inv_counter == K;
        if (acked) rx.inv_counter = 0;
      }

      if (sender > 0) {
        auto& tx = nodes_[sender - 1];
        tx.conveyed_current++;
        if (acked) {
          assert(tx.conveyed_current == K && tx.queue.front().received == K);
          tx.queue.pop_front();
          tx.stored -= K;
          tx.conveyed_current = 0;
        }
      } else if (acked) {
        ++source_block_;
        block_start_.push_back(e + 1);
        report_.blocks_started++;
      }
    }

    if (measuring) {
      for (std::size_t i = 0; i < nodes_.size(); ++i) {
        report_.nodes[i].tf_counts[state_index(nodes_[i].state(), K)]++;
      }
    }
    ++epoch_;
  }

  void step() {
    step([this](int link) { return rng_.uniform(static_cast<std::uint64_t>(link), epoch_) < net_.eps(link); });
  }

  SimReport run() {
    while (epoch_ < sim_.epochs) step();
    return finish();
  }

  SimReport finish() {
    report_.measured_epochs = epoch_ - std::min(window_start_, epoch_);
    report_.throughput = report_.measured_epochs == 0
                             ? 0.0
                             : static_cast<double>(report_.delivered_packets) /
                                   static_cast<double>(report_.measured_epochs);
    report_.replication_throughput = {{rng_.seed, report_.throughput}};
    return report_;
  }

 private:
  void complete_block(std::int64_t id, std::int64_t e) {
    assert(id == first_open_block_);
    const std::int64_t start = block_start_.front();
    block_start_.pop_front();
    ++first_open_block_;
    report_.blocks_completed++;
    if (e >= window_start_) report_.delivered_packets += static_cast<std::uint64_t>(net_.K);
    if (id < sim_.warmup_blocks) return;
    const std::int64_t delay = e - start + 1;
    if (static_cast<std::size_t>(delay) >= report_.delay_counts.size()) {
      report_.delay_counts.resize(static_cast<std::size_t>(delay) + 1, 0);
    }
    report_.delay_counts[static_cast<std::size_t>(delay)]++;
    if (sim_.record_samples) report_.samples.push_back({id, start, e, delay});
  }

  NetworkConfig net_;
  SimConfig sim_;
  CounterRng rng_;
  std::int64_t window_start_;
  std::int64_t epoch_ = 0;
  std::vector<NodeSim> nodes_;
  std::int64_t source_block_ = 0;
  std::int64_t sink_inv_ = 0;
  std::int64_t first_open_block_ = 0;
  std::deque<std::int64_t> block_start_;  // start epochs of blocks not yet at the sink
  SimReport report_;
};

// Single replication with an explicit seed.
inline SimReport run_replication(const NetworkConfig& net, const SimConfig& sim, std::uint64_t seed) {
  return LineSimulator(net, sim, seed).run();
}

// All replications of sim (seeds derived from sim.seed), merged.
inline SimReport run_simulation(const NetworkConfig& net, const SimConfig& sim) {
  sim.validate();
  std::vector<SimReport> parts;
  for (int k = 0; k < sim.replications; ++k) {
    parts.push_back(run_replication(net, sim, CounterRng::replication_seed(sim.seed, static_cast<std::uint64_t>(k))));
  }
  SimReport merged = merge_reports(parts);
  merged.sim = sim;
  if (sim.record_samples) {
    for (const auto& p : parts) merged.samples.insert(merged.samples.end(), p.samples.begin(), p.samples.end());
  }
  return merged;
}

}  // namespace blockrlc
