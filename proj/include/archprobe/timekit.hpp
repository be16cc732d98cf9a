#pragma once

// Timing primitives and the measurement protocol shared by every kernel:
// clock sources, timer calibration, median aggregation, warm/timed passes
// with optional cache flushing in between.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <limits>
#include <memory>
#include <span>
#include <type_traits>
#include <unistd.h>
#include <utility>
#include <vector>

#if defined(__x86_64__) || defined(__i386__)
#include <x86intrin.h>
#define ARCHPROBE_HAVE_TSC 1
#endif

#include "archprobe/error.hpp"

namespace archprobe {

/// Keeps `value` observable so the optimizer cannot drop the computation
/// that produced it.
template <class T>
inline void do_not_optimize(const T& value) {
#if defined(__GNUC__) || defined(__clang__)
  asm volatile("" : : "r,m"(value) : "memory");
#else
  static volatile T sink;
  sink = value;
#endif
}

inline void clobber_memory() {
#if defined(__GNUC__) || defined(__clang__)
  asm volatile("" : : : "memory");
#endif
}

/// A time source with an associated cycle counter. Implementations must be
/// monotone; calibrate_timer() verifies that.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual double now_ns() = 0;
  virtual std::uint64_t cycles() = 0;
};

/// Wall clock (std::chrono::steady_clock) plus the TSC where available.
class SteadyClock final : public Clock {
 public:
  double now_ns() override {
    using namespace std::chrono;
    return static_cast<double>(
        duration_cast<nanoseconds>(steady_clock::now().time_since_epoch()).count());
  }

  std::uint64_t cycles() override {
#ifdef ARCHPROBE_HAVE_TSC
    return __rdtsc();
#else
    return static_cast<std::uint64_t>(now_ns());
#endif
  }
};

/// Deterministic clock that advances by a fixed step on every read. The
/// cycle counter reports the current time scaled by `cycles_per_ns` and does
/// not advance the clock.
class SteppingClock : public Clock {
 public:
  explicit SteppingClock(double step_ns, double cycles_per_ns = 1.0)
      : step_ns_(step_ns), cycles_per_ns_(cycles_per_ns) {}

  double now_ns() override {
    now_ += step_ns_;
    return now_;
  }

  std::uint64_t cycles() override {
    return static_cast<std::uint64_t>(now_ * cycles_per_ns_);
  }

  /// Moves time forward without a read; used by modeled kernels.
  void advance(double ns) { now_ += ns; }

  double current() const { return now_; }
  double step_ns() const { return step_ns_; }

 private:
  double now_ = 0.0;
  double step_ns_;
  double cycles_per_ns_;
};

struct TimerCalibration {
  double overhead_ns = 0.0;
  double resolution_ns = 1.0;
  double cycles_per_ns = 1.0;
  /// Set when the cycle rate varied by more than the configured threshold
  /// across calibration windows (frequency scaling, migration).
  bool frequency_unstable = false;

  double to_cycles(double ns) const { return ns * cycles_per_ns; }
  double to_ns(double cycles) const { return cycles / cycles_per_ns; }

  bool operator==(const TimerCalibration&) const = default;
};

struct CalibrationOptions {
  int trials = 1000;
  double window_ns = 50e6;
  int windows = 3;
  double unstable_threshold = 0.02;
  /// Reads allowed while waiting for a coarse clock to tick.
  std::uint64_t max_spin_reads = 100'000'000;
};

/// Median of a copy of `values`; even counts average the two middle values.
inline double median(std::vector<double> values) {
  if (values.empty()) throw Error(ErrorCode::InvalidArgument, "median of an empty sample list");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return lower + (upper - lower) / 2.0;
}

inline double median(std::span<const double> values) {
  return median(std::vector<double>(values.begin(), values.end()));
}

inline TimerCalibration calibrate_timer(Clock& clock, const CalibrationOptions& options = {}) {
  if (options.trials < 1 || options.windows < 1 || !(options.window_ns > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "calibration needs trials, windows and a positive window");
  }
  TimerCalibration calib;

  std::vector<double> deltas(static_cast<std::size_t>(options.trials));
  double min_positive = std::numeric_limits<double>::infinity();
  for (auto& delta : deltas) {
    const double a = clock.now_ns();
    const double b = clock.now_ns();
    if (b < a) throw Error(ErrorCode::Calibration, "clock went backwards");
    delta = b - a;
    if (delta > 0.0) min_positive = std::min(min_positive, delta);
  }
  calib.overhead_ns = median(deltas);

  if (!std::isfinite(min_positive)) {
    // Coarse clock: wait for a few ticks and keep the smallest one.
    for (int tick = 0; tick < 3; ++tick) {
      const double start = clock.now_ns();
      double next = start;
      std::uint64_t reads = 0;
      while (next == start) {
        if (++reads > options.max_spin_reads) throw Error(ErrorCode::Calibration, "clock does not advance");
        next = clock.now_ns();
      }
      if (next < start) throw Error(ErrorCode::Calibration, "clock went backwards");
      min_positive = std::min(min_positive, next - start);
    }
  }
  calib.resolution_ns = min_positive;

  std::vector<double> rates;
  for (int w = 0; w < options.windows; ++w) {
    const double t0 = clock.now_ns();
    const std::uint64_t c0 = clock.cycles();
    double t1 = t0;
    double prev = t0;
    std::uint64_t reads = 0;
    while (t1 - t0 < options.window_ns) {
      if (++reads > options.max_spin_reads) throw Error(ErrorCode::Calibration, "clock does not advance");
      t1 = clock.now_ns();
      if (t1 < prev) throw Error(ErrorCode::Calibration, "clock went backwards");
      prev = t1;
    }
    const std::uint64_t c1 = clock.cycles();
    if (c1 <= c0) throw Error(ErrorCode::Calibration, "cycle counter does not advance");
    rates.push_back(static_cast<double>(c1 - c0) / (t1 - t0));
  }
  calib.cycles_per_ns = median(rates);
  const auto [lo, hi] = std::minmax_element(rates.begin(), rates.end());
  calib.frequency_unstable = (*hi - *lo) / calib.cycles_per_ns > options.unstable_threshold;
  return calib;
}

enum class Aggregator { Median };

struct RunProtocol {
  int warm_passes = 2;
  int repetitions = 10;
  Aggregator aggregator = Aggregator::Median;
  bool flush_between = false;

  /// Protocol for transfer-style experiments, which repeat 1000 times.
  static RunProtocol transfer() {
    RunProtocol p;
    p.repetitions = 1000;
    return p;
  }

  void validate() const {
    if (warm_passes < 0) throw Error(ErrorCode::InvalidArgument, "warm_passes must be >= 0");
    if (repetitions < 1) throw Error(ErrorCode::InvalidArgument, "repetitions must be >= 1");
  }

  bool operator==(const RunProtocol&) const = default;
};

struct Sample {
  double elapsed_ns = 0.0;
  double work_units = 1.0;

  /// Elapsed time with the timer overhead removed, clamped at zero.
  double net_ns(const TimerCalibration& calib) const {
    return std::max(elapsed_ns - calib.overhead_ns, 0.0);
  }

  double per_unit(const TimerCalibration& calib) const { return net_ns(calib) / work_units; }
};

inline double aggregate(std::span<const double> samples, const RunProtocol& protocol) {
  if (samples.empty()) throw Error(ErrorCode::InvalidArgument, "cannot aggregate an empty sample list");
  switch (protocol.aggregator) {
    case Aggregator::Median: return median(samples);
  }
  return median(samples);
}

/// Runs `kernel` protocol.warm_passes times untimed, then
/// protocol.repetitions timed times, calling `flush` between consecutive
/// passes when protocol.flush_between is set. A kernel returning void is
/// timed with `clock`; a kernel returning double reports its own elapsed
/// nanoseconds (used when the timed region runs on another thread).
/// Exceptions from the kernel are rethrown as KernelFailure carrying the
/// 1-based pass number.
template <class Kernel, class Flush>
Sample run_protocol(Clock& clock, const RunProtocol& protocol, double work_units, Kernel&& kernel,
                    Flush&& flush) {
  protocol.validate();
  if (!(work_units > 0.0)) throw Error(ErrorCode::InvalidArgument, "work_units must be positive");

  constexpr bool self_timed = !std::is_void_v<std::invoke_result_t<Kernel&>>;
  const int total = protocol.warm_passes + protocol.repetitions;
  std::vector<double> timed;
  timed.reserve(static_cast<std::size_t>(protocol.repetitions));

  for (int pass = 0; pass < total; ++pass) {
    if (pass > 0 && protocol.flush_between) flush();
    const bool is_timed = pass >= protocol.warm_passes;
    try {
      if constexpr (self_timed) {
        const double elapsed = static_cast<double>(kernel());
        if (is_timed) timed.push_back(elapsed);
      } else {
        if (is_timed) {
          const double t0 = clock.now_ns();
          kernel();
          const double t1 = clock.now_ns();
          timed.push_back(t1 - t0);
        } else {
          kernel();
        }
      }
    } catch (const KernelFailure&) {
      throw;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::Capability || e.code() == ErrorCode::Pinning) throw;
      throw KernelFailure(pass + 1, e.what());
    } catch (const std::exception& e) {
      throw KernelFailure(pass + 1, e.what());
    }
  }
  return Sample{aggregate(timed, protocol), work_units};
}

template <class Kernel>
Sample run_protocol(Clock& clock, const RunProtocol& protocol, double work_units, Kernel&& kernel) {
  return run_protocol(clock, protocol, work_units, std::forward<Kernel>(kernel), [] {});
}

/// Largest cache reported by the OS, or 0 when unknown.
inline std::size_t largest_cache_bytes() {
  long best = 0;
#ifdef _SC_LEVEL1_DCACHE_SIZE
  for (int name : {_SC_LEVEL1_DCACHE_SIZE, _SC_LEVEL2_CACHE_SIZE, _SC_LEVEL3_CACHE_SIZE,
                   _SC_LEVEL4_CACHE_SIZE}) {
    best = std::max(best, sysconf(name));
  }
#endif
  return best > 0 ? static_cast<std::size_t>(best) : 0;
}

/// Sweep size: 4x the largest cache, between 32 MiB and 512 MiB.
inline std::size_t default_flush_bytes() {
  constexpr std::size_t floor_bytes = 32u << 20;
  constexpr std::size_t cap_bytes = 512u << 20;
  return std::clamp<std::size_t>(4 * largest_cache_bytes(), floor_bytes, cap_bytes);
}

/// Evicts data caches by touching every line of a large private buffer.
class CacheFlusher {
 public:
  explicit CacheFlusher(std::size_t bytes = default_flush_bytes()) : bytes_(bytes) {}

  void operator()() {
    if (!buffer_) buffer_ = std::make_unique<std::uint64_t[]>(bytes_ / sizeof(std::uint64_t));
    constexpr std::size_t stride = 64 / sizeof(std::uint64_t);
    const std::size_t n = bytes_ / sizeof(std::uint64_t);
    std::uint64_t sum = 0;
    for (std::size_t i = 0; i < n; i += stride) {
      buffer_[i] += 1;
      sum += buffer_[i];
    }
    do_not_optimize(sum);
  }

  std::size_t bytes() const { return bytes_; }

 private:
  std::size_t bytes_;
  std::unique_ptr<std::uint64_t[]> buffer_;
};

}  // namespace archprobe
