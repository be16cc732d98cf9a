#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "archprobe/backend.hpp"
#include "archprobe/chase.hpp"
#include "archprobe/error.hpp"
#include "archprobe/kernel_types.hpp"
#include "archprobe/timekit.hpp"
#include "archprobe/topo.hpp"

namespace archprobe {

inline constexpr std::uint64_t kDefaultChaseIters = 1'000'000;
inline constexpr std::uint64_t kDefaultChainExecutions = 100'000;
inline constexpr std::uint64_t kDefaultStriadBytes = 128ull << 20;
inline constexpr std::uint64_t kDefaultStriadJump = 2048;
inline constexpr std::size_t kDefaultMathLength = 1024;
inline constexpr std::uint64_t kDefaultMathReps = 100'000;

namespace detail {

inline void require_enough_work(const Sample& s, const TimerCalibration& calib, const std::string& what) {
  if (s.elapsed_ns < 100.0 * calib.resolution_ns) {
    throw Error(ErrorCode::InsufficientWork, what + ": elapsed " + std::to_string(s.elapsed_ns) +
                                                 " ns is below 100x the timer resolution; increase the work");
  }
}

inline void require_positive(std::uint64_t v, const char* name) {
  if (v == 0) throw Error(ErrorCode::InvalidArgument, std::string(name) + " must be positive");
}

}  // namespace detail

/// Nanoseconds per dependent access. `indices` may be empty, in which case
/// the backend builds the array itself.
inline double chase_latency(const ChaseGeometry& geometry, std::uint64_t iters, const RunProtocol& protocol,
                            Backend& backend, std::span<const std::uint64_t> indices = {}) {
  detail::require_positive(iters, "iters");
  const TimerCalibration& calib = backend.calibration();
  std::uint64_t last = 0;
  const Sample s = run_protocol(
      backend.clock(), protocol, static_cast<double>(iters),
      [&] { last = backend.chase(geometry, iters, indices); }, [&] { backend.flush_caches(); });
  do_not_optimize(last);
  detail::require_enough_work(s, calib, "chase");
  return s.per_unit(calib);
}

inline double chase_latency(const ChaseArray& chase, std::uint64_t iters, const RunProtocol& protocol,
                            Backend& backend) {
  return chase_latency(chase.geometry(), iters, protocol, backend, chase.indices());
}

inline std::vector<std::uint64_t> powers_of_two(std::uint64_t from, std::uint64_t to) {
  std::vector<std::uint64_t> out;
  for (std::uint64_t v = from; v <= to; v *= 2) out.push_back(v);
  return out;
}

/// 8 KiB .. 32 MiB by powers of two.
inline std::vector<std::uint64_t> default_grid_sizes() { return powers_of_two(8u << 10, 32u << 20); }
/// 8 B .. 4 KiB by powers of two.
inline std::vector<std::uint64_t> default_grid_strides() { return powers_of_two(8, 4096); }

inline LatencyGrid measure_latency_grid(const std::vector<std::uint64_t>& sizes,
                                        const std::vector<std::uint64_t>& strides, std::uint64_t iters,
                                        const RunProtocol& protocol, Backend& backend) {
  LatencyGrid grid{sizes, strides, {}};
  if (sizes.empty() || strides.empty()) throw Error(ErrorCode::InvalidArgument, "latency grid axes must be non-empty");
  if (strides.back() >= sizes.front()) {
    throw Error(ErrorCode::InvalidArgument, "largest stride must be smaller than the smallest size");
  }
  for (std::uint64_t size : sizes) {
    auto& row = grid.latency_ns.emplace_back();
    for (std::uint64_t stride : strides) {
      row.push_back(chase_latency(make_chase_geometry(size, stride), iters, protocol, backend));
    }
  }
  grid.validate();
  return grid;
}

/// Cycles per operation, or per pair in pair mode.
inline double instruction_chain_latency(const ChainSpec& spec, const RunProtocol& protocol, Backend& backend,
                                        std::uint64_t executions = kDefaultChainExecutions) {
  spec.validate();
  detail::require_positive(executions, "executions");
  const TimerCalibration& calib = backend.calibration();
  const double per_chain = spec.pair_mode ? spec.chain_len / 2 : spec.chain_len;
  const Sample s = run_protocol(backend.clock(), protocol, static_cast<double>(executions) * per_chain,
                                [&] { backend.chain(spec, executions); });
  detail::require_enough_work(s, calib, "instruction chain");
  return calib.to_cycles(s.per_unit(calib));
}

inline double arith_total_flops(std::size_t threads, int streams, int lanes, std::uint64_t iters, ArithMix mix) {
  return static_cast<double>(threads) * streams * lanes * static_cast<double>(iters) * flops_per_element(mix);
}

struct ThroughputResult {
  double gflops = 0.0;
  double total_flops = 0.0;
  std::vector<int> cpus;
};

inline ThroughputResult arithmetic_throughput(std::size_t threads, int streams, ArithMix mix,
                                              const PlacementPattern& placement, std::uint64_t iters,
                                              const RunProtocol& protocol, Backend& backend, int lanes = 8) {
  if (streams != 1 && streams != 2) throw Error(ErrorCode::InvalidArgument, "streams must be 1 or 2");
  if (lanes < 1) throw Error(ErrorCode::InvalidArgument, "lanes must be >= 1");
  detail::require_positive(iters, "iters");
  ThroughputResult result;
  result.cpus = assign_threads(backend.topology(), threads, placement);
  result.total_flops = arith_total_flops(threads, streams, lanes, iters, mix);
  const TimerCalibration& calib = backend.calibration();
  auto run = backend.prepare_arith(ArithJob{result.cpus, streams, mix, lanes, iters});
  const Sample s = run_protocol(backend.clock(), protocol, result.total_flops, [&] { run->run_pass(); });
  detail::require_enough_work(s, calib, "arithmetic throughput");
  result.gflops = 1.0 / s.per_unit(calib);
  return result;
}

/// GB/s of useful traffic. `buffer_bytes` is the size of each array the
/// kernel touches. Disjoint runs split the arrays between threads and report
/// the aggregate; shared runs have every thread read the whole buffer and
/// report the bandwidth one thread sees.
inline double bandwidth(BandwidthKind kind, std::size_t threads, const PlacementPattern& placement,
                        std::uint64_t buffer_bytes, bool shared, bool software_prefetch, const RunProtocol& protocol,
                        Backend& backend) {
  if (buffer_bytes == 0 || buffer_bytes % 8 != 0) {
    throw Error(ErrorCode::InvalidArgument, "buffer size must be a positive multiple of 8 bytes");
  }
  if (!shared && buffer_bytes / 8 < threads) {
    throw Error(ErrorCode::InvalidArgument, "buffer has fewer elements than threads");
  }
  if (shared && !backend.supports_shared(kind)) {
    throw Error(ErrorCode::Capability, "backend '" + backend.name() + "' cannot share buffers for kernel '" +
                                           std::string(to_string(kind)) + "'");
  }
  BandwidthJob job{kind, assign_threads(backend.topology(), threads, placement), placement, buffer_bytes, shared,
                   software_prefetch};
  const TimerCalibration& calib = backend.calibration();
  auto run = backend.prepare_bandwidth(job);
  const double bytes = static_cast<double>(buffer_bytes / 8) * useful_bytes_per_element(kind);
  const Sample s = run_protocol(
      backend.clock(), protocol, bytes, [&] { run->run_pass(); }, [&] { backend.flush_caches(); });
  detail::require_enough_work(s, calib, "bandwidth");
  return 1.0 / s.per_unit(calib);
}

inline BandwidthCurve bandwidth_curve(BandwidthKind kind, const std::vector<std::size_t>& thread_counts,
                                      const PlacementPattern& placement, std::uint64_t buffer_bytes, bool shared,
                                      bool software_prefetch, const RunProtocol& protocol, Backend& backend) {
  BandwidthCurve curve{kind, shared, software_prefetch, buffer_bytes, {}};
  for (std::size_t i = 0; i < thread_counts.size(); ++i) {
    if (i > 0 && thread_counts[i] <= thread_counts[i - 1]) {
      throw Error(ErrorCode::InvalidArgument, "thread counts must be strictly increasing");
    }
    curve.points.push_back({thread_counts[i], placement,
                            bandwidth(kind, thread_counts[i], placement, buffer_bytes, shared, software_prefetch,
                                      protocol, backend)});
  }
  return curve;
}

/// Stanza triad: runs of `stanza_elems` triad iterations separated by jumps
/// of `jump_elems`. Caches are flushed before every pass.
inline double striad(std::uint64_t total_bytes, std::uint64_t stanza_elems, std::uint64_t jump_elems,
                     const RunProtocol& protocol, Backend& backend) {
  if (stanza_elems == 0) throw Error(ErrorCode::InvalidArgument, "stanza length must be positive");
  if (total_bytes < 8 || total_bytes % 8 != 0) {
    throw Error(ErrorCode::InvalidArgument, "striad array size must be a positive multiple of 8 bytes");
  }
  RunProtocol flushed = protocol;
  flushed.flush_between = true;
  const TimerCalibration& calib = backend.calibration();
  auto run = backend.prepare_striad(StriadJob{total_bytes, stanza_elems, jump_elems});
  const double bytes = 24.0 * static_cast<double>(striad_touched_elements(total_bytes / 8, stanza_elems, jump_elems));
  const Sample s = run_protocol(
      backend.clock(), flushed, bytes, [&] { run->run_pass(); }, [&] { backend.flush_caches(); });
  detail::require_enough_work(s, calib, "striad");
  return 1.0 / s.per_unit(calib);
}

/// Uniform [0, 1) inputs from a seeded generator.
inline std::vector<double> math_inputs(std::size_t len, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> out(len);
  for (auto& v : out) v = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return out;
}

struct MathBenchResult {
  double ns_per_element = 0.0;
  std::vector<double> outputs;
};

inline MathBenchResult math_function_bench(const MathJob& job, const RunProtocol& protocol, Backend& backend) {
  if (job.inputs.empty()) throw Error(ErrorCode::InvalidArgument, "math input array is empty");
  detail::require_positive(job.reps, "reps");
  const TimerCalibration& calib = backend.calibration();
  auto run = backend.prepare_math(job);
  const double elements = static_cast<double>(job.reps) * static_cast<double>(job.inputs.size());
  const Sample s = run_protocol(backend.clock(), protocol, elements, [&] { run->run_pass(); });
  detail::require_enough_work(s, calib, "math function");
  return {s.per_unit(calib), run->outputs()};
}

inline MathBenchResult math_function_bench(MathFn fn, Precision precision, const RunProtocol& protocol,
                                           Backend& backend, std::size_t array_len = kDefaultMathLength,
                                           std::uint64_t reps = kDefaultMathReps, std::uint64_t seed = 1) {
  return math_function_bench(MathJob{fn, precision, math_inputs(array_len, seed), reps}, protocol, backend);
}

struct MathComparison {
  double single_ns = 0.0;
  double double_ns = 0.0;
  /// How many times slower double precision is than single.
  double ratio() const { return double_ns / single_ns; }
};

inline MathComparison math_precision_ratio(MathFn fn, const RunProtocol& protocol, Backend& backend,
                                           std::size_t array_len = kDefaultMathLength,
                                           std::uint64_t reps = kDefaultMathReps, std::uint64_t seed = 1) {
  MathComparison c;
  c.single_ns = math_function_bench(fn, Precision::Single, protocol, backend, array_len, reps, seed).ns_per_element;
  c.double_ns = math_function_bench(fn, Precision::Double, protocol, backend, array_len, reps, seed).ns_per_element;
  return c;
}

}  // namespace archprobe
