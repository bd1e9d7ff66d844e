#pragma once

// Finite-support probability mass functions over non-negative integer epochs.
//
// A Pmf is dense: mass[k] is the probability of the value offset + k. The
// mass removed by truncation is carried along in dropped_mass() (inputs'
// dropped mass adds up through convolutions and averages through mixtures).
// An operation given a tail tolerance only trims the upper tail while the
// result's cumulative dropped mass stays below that tolerance, so a result
// whose inputs were within tolerance has total mass >= 1 - tolerance.

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <fftw3.h>

#include "blockrlc/error.hpp"

namespace blockrlc {

inline constexpr double kDefaultTailTolerance = 1e-9;

class Pmf {
 public:
  Pmf() = default;

  // Normalizes the representation: negative entries are clamped, leading
  // zeros are folded into the offset and trailing zeros are removed.
  Pmf(std::int64_t offset, std::vector<double> mass, double dropped = 0.0)
      : offset_(offset), mass_(std::move(mass)), dropped_(dropped) {
    if (offset_ < 0) throw DomainError("pmf offset must be non-negative");
    for (double& m : mass_) {
      if (!(m > 0.0)) m = 0.0;
    }
    while (!mass_.empty() && mass_.back() == 0.0) mass_.pop_back();
    auto first = std::find_if(mass_.begin(), mass_.end(), [](double m) { return m != 0.0; });
    offset_ += first - mass_.begin();
    mass_.erase(mass_.begin(), first);
    if (mass_.empty()) offset_ = 0;
  }

  static Pmf delta(std::int64_t n) {
    if (n < 0) throw DomainError("delta at a negative epoch");
    return Pmf(n, {1.0});
  }

  // Geometric law on {1, 2, ...}: P(n) = lambda^(n-1) (1 - lambda), i.e. the
  // number of epochs until the first success when each epoch fails with
  // probability lambda. The untruncated mean is 1 / (1 - lambda).
  static Pmf geometric(double lambda, double tail_tolerance = kDefaultTailTolerance) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw DomainError("geometric parameter outside [0,1]");
    if (!(tail_tolerance > 0.0 && tail_tolerance < 1.0)) throw DomainError("tail tolerance outside (0,1)");
    if (lambda >= 1.0) throw DomainError("degenerate geometric (infinite mean)");
    std::vector<double> mass;
    double term = 1.0 - lambda;
    double tail = 1.0;  // P(X > n) after n entries
    while (tail >= tail_tolerance) {
      mass.push_back(term);
      tail *= lambda;
      term *= lambda;
    }
    return Pmf(1, std::move(mass), tail);
  }

  bool empty() const noexcept { return mass_.empty(); }
  std::size_t size() const noexcept { return mass_.size(); }
  std::int64_t offset() const noexcept { return offset_; }
  std::int64_t min_support() const noexcept { return offset_; }
  std::int64_t max_support() const noexcept {
    return offset_ + static_cast<std::int64_t>(mass_.size()) - 1;
  }
  std::span<const double> mass() const noexcept { return mass_; }
  double dropped_mass() const noexcept { return dropped_; }

  double total_mass() const noexcept { return std::accumulate(mass_.begin(), mass_.end(), 0.0); }

  double operator[](std::int64_t n) const noexcept {
    const std::int64_t k = n - offset_;
    if (k < 0 || k >= static_cast<std::int64_t>(mass_.size())) return 0.0;
    return mass_[static_cast<std::size_t>(k)];
  }

  double cdf(std::int64_t n) const noexcept {
    double acc = 0.0;
    for (std::int64_t k = offset_; k <= std::min(n, max_support()); ++k) acc += (*this)[k];
    return acc;
  }

  // Drops the longest upper tail that keeps dropped_mass() below tail_tolerance.
  void truncate_tail(double tail_tolerance) {
    const double budget = tail_tolerance - dropped_;
    double tail = 0.0;
    while (!mass_.empty() && tail + mass_.back() < budget) {
      tail += mass_.back();
      mass_.pop_back();
    }
    dropped_ += tail;
    if (mass_.empty()) offset_ = 0;
  }

  friend bool operator==(const Pmf&, const Pmf&) = default;

 private:
  std::int64_t offset_ = 0;
  std::vector<double> mass_;
  double dropped_ = 0.0;
};

enum class ConvolutionMethod { automatic, direct, transform };

namespace detail {

// Supports shorter than this on either side are convolved by direct summation.
inline constexpr std::size_t kDirectConvolutionLimit = 64;

inline std::vector<double> convolve_direct(std::span<const double> a, std::span<const double> b) {
  std::vector<double> out(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double ai = a[i];
    if (ai == 0.0) continue;
    for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += ai * b[j];
  }
  return out;
}

// The FFTW planner is not reentrant; execution on distinct arrays is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const noexcept { fftw_free(p); }
};

inline std::vector<double> convolve_transform(std::span<const double> a, std::span<const double> b) {
  const std::size_t n_out = a.size() + b.size() - 1;
  const std::size_t n = std::bit_ceil(n_out);
  const std::size_t n_freq = n / 2 + 1;

  std::unique_ptr<double, FftwFree> xa(fftw_alloc_real(n)), xb(fftw_alloc_real(n));
  std::unique_ptr<fftw_complex, FftwFree> fa(fftw_alloc_complex(n_freq)), fb(fftw_alloc_complex(n_freq));
  fftw_plan forward_a, forward_b, inverse;
  {
    std::lock_guard lock(fftw_planner_mutex());
    const int len = static_cast<int>(n);
    forward_a = fftw_plan_dft_r2c_1d(len, xa.get(), fa.get(), FFTW_ESTIMATE);
    forward_b = fftw_plan_dft_r2c_1d(len, xb.get(), fb.get(), FFTW_ESTIMATE);
    inverse = fftw_plan_dft_c2r_1d(len, fa.get(), xa.get(), FFTW_ESTIMATE);
  }
  std::fill_n(xa.get(), n, 0.0);
  std::fill_n(xb.get(), n, 0.0);
  std::copy(a.begin(), a.end(), xa.get());
  std::copy(b.begin(), b.end(), xb.get());
  fftw_execute(forward_a);
  fftw_execute(forward_b);
  for (std::size_t k = 0; k < n_freq; ++k) {
    const std::complex<double> za(fa.get()[k][0], fa.get()[k][1]);
    const std::complex<double> zb(fb.get()[k][0], fb.get()[k][1]);
    const std::complex<double> z = za * zb;
    fa.get()[k][0] = z.real();
    fa.get()[k][1] = z.imag();
  }
  fftw_execute(inverse);
  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(forward_a);
    fftw_destroy_plan(forward_b);
    fftw_destroy_plan(inverse);
  }
  std::vector<double> out(n_out);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t k = 0; k < n_out; ++k) out[k] = xa.get()[k] * scale;
  return out;
}

}  // namespace detail

// Distribution of the sum of two independent variables.
inline Pmf convolve(const Pmf& a, const Pmf& b, double tail_tolerance = kDefaultTailTolerance,
                    ConvolutionMethod method = ConvolutionMethod::automatic) {
  const double dropped = a.dropped_mass() + b.dropped_mass();
  if (a.empty() || b.empty()) return Pmf(0, {}, dropped);
  bool direct = method == ConvolutionMethod::direct;
  if (method == ConvolutionMethod::automatic) {
    direct = std::min(a.size(), b.size()) <= detail::kDirectConvolutionLimit;
  }
  std::vector<double> out = direct ? detail::convolve_direct(a.mass(), b.mass())
                                   : detail::convolve_transform(a.mass(), b.mass());
  Pmf result(a.offset() + b.offset(), std::move(out), dropped);
  result.truncate_tail(tail_tolerance);
  return result;
}

// l-fold convolution of a with itself, evaluated as a left fold so that the
// result is identical to applying convolve() l-1 times. l = 0 yields delta(0).
inline Pmf convolve_n(const Pmf& a, int l, double tail_tolerance = kDefaultTailTolerance) {
  if (l < 0) throw DomainError("negative convolution power");
  if (l == 0) return Pmf::delta(0);
  Pmf acc = a;
  for (int k = 1; k < l; ++k) acc = convolve(acc, a, tail_tolerance);
  return acc;
}

// All powers a^{⊗0} .. a^{⊗max_power}; entry l is identical to convolve_n(a, l).
inline std::vector<Pmf> convolution_powers(const Pmf& a, int max_power,
                                           double tail_tolerance = kDefaultTailTolerance) {
  if (max_power < 0) throw DomainError("negative convolution power");
  std::vector<Pmf> powers;
  powers.reserve(static_cast<std::size_t>(max_power) + 1);
  powers.push_back(Pmf::delta(0));
  if (max_power >= 1) powers.push_back(a);
  for (int l = 2; l <= max_power; ++l) powers.push_back(convolve(powers.back(), a, tail_tolerance));
  return powers;
}

// Pointwise convex combination.
inline Pmf mix(std::span<const double> weights, std::span<const Pmf> pmfs) {
  if (weights.size() != pmfs.size()) throw DomainError("mix: weights and pmfs differ in length");
  if (weights.empty()) throw DomainError("mix: no components");
  double wsum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw DomainError("mix: negative weight");
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > 1e-9) {
    throw DomainError("mix: weights sum to " + std::to_string(wsum) + ", expected 1");
  }
  std::int64_t lo = INT64_MAX, hi = -1;
  double dropped = 0.0;
  for (std::size_t i = 0; i < pmfs.size(); ++i) {
    if (weights[i] == 0.0 || pmfs[i].empty()) continue;
    lo = std::min(lo, pmfs[i].min_support());
    hi = std::max(hi, pmfs[i].max_support());
  }
  if (hi < 0) return Pmf();
  std::vector<double> out(static_cast<std::size_t>(hi - lo + 1), 0.0);
  for (std::size_t i = 0; i < pmfs.size(); ++i) {
    if (weights[i] == 0.0) continue;
    dropped += weights[i] * pmfs[i].dropped_mass();
    const auto m = pmfs[i].mass();
    const auto base = static_cast<std::size_t>(pmfs[i].offset() - lo);
    for (std::size_t k = 0; k < m.size(); ++k) out[base + k] += weights[i] * m[k];
  }
  return Pmf(lo, std::move(out), dropped);
}

inline Pmf mix(std::initializer_list<double> weights, std::initializer_list<Pmf> pmfs) {
  return mix(std::span<const double>(weights.begin(), weights.size()),
             std::span<const Pmf>(pmfs.begin(), pmfs.size()));
}

struct Moments {
  double mean = 0.0;
  double stddev = 0.0;
};

// Mean and standard deviation of the renormalized PMF.
inline Moments moments(const Pmf& a) {
  const double total = a.total_mass();
  if (a.empty() || !(total > 0.0)) throw DomainError("moments of an empty pmf");
  double m1 = 0.0;
  for (std::int64_t n = a.min_support(); n <= a.max_support(); ++n) m1 += static_cast<double>(n) * a[n];
  m1 /= total;
  double var = 0.0;
  for (std::int64_t n = a.min_support(); n <= a.max_support(); ++n) {
    const double d = static_cast<double>(n) - m1;
    var += d * d * a[n];
  }
  var /= total;
  return {m1, std::sqrt(var)};
}

// Half the L1 distance over the union of supports (no renormalization).
inline double total_variation(const Pmf& a, const Pmf& b) {
  if (a.empty() && b.empty()) return 0.0;
  std::int64_t lo = a.empty() ? b.min_support() : b.empty() ? a.min_support()
                                                            : std::min(a.min_support(), b.min_support());
  std::int64_t hi = std::max(a.empty() ? -1 : a.max_support(), b.empty() ? -1 : b.max_support());
  double acc = 0.0;
  for (std::int64_t n = lo; n <= hi; ++n) acc += std::abs(a[n] - b[n]);
  return 0.5 * acc;
}

}  // namespace blockrlc
