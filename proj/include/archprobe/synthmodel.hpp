#pragma once

// Closed-form machine model. It backs the synthetic execution backend and
// is the oracle the kernel and analysis tests are checked against.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "archprobe/error.hpp"
#include "archprobe/kernel_types.hpp"
#include "archprobe/keyvalue.hpp"

namespace archprobe {

struct SyntheticLevel {
  std::uint64_t capacity_bytes = 0;
  double latency_cycles = 0.0;

  bool operator==(const SyntheticLevel&) const = default;
};

struct SyntheticHierarchy {
  std::vector<SyntheticLevel> levels{{32u << 10, 3.0}, {512u << 10, 24.0}};
  std::uint64_t line_size_bytes = 64;
  double dram_latency_cycles = 302.0;
  double freq_ghz = 1.05;
  int cores = 60;
  int smt = 4;
  int lanes_dp = 8;
  double issue_latency_cycles = 4.0;
  double per_thread_stream_gbps = 4.7;
  double read_peak_gbps = 164.0;
  double write_peak_gbps = 76.0;
  double streaming_store_factor = 1.7;
  double shared_floor_fraction = 1.0 / 3.0;
  double remote_latency_cycles = 250.0;
  std::uint64_t prefetch_ramp_elems = 512;
  double double_math_cost_factor = 5.0;
  /// Single-precision cost of one math-function element.
  double math_cycles_per_element = 6.0;
  /// Dependent-chain latency per named operation; names missing here are
  /// reported as unsupported.
  std::map<std::string, double> op_latency_cycles{
      {"mask", 2.0},     {"add", 4.0},      {"mul", 4.0},  {"fma", 4.0}, {"cvtps2pd", 5.0},
      {"cvtpd2ps", 5.0}, {"perm", 6.0},     {"exp2", 6.0}, {"log2", 6.0}, {"rcp", 6.0},
      {"rsqrt", 6.0},
  };

  /// Throws InvalidArgument naming the first violated invariant.
  void validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidArgument, "synthetic model: " + what); };
    if (levels.empty()) fail("needs at least one cache level");
    for (std::size_t i = 0; i < levels.size(); ++i) {
      if (levels[i].capacity_bytes == 0 || !(levels[i].latency_cycles > 0)) fail("level capacity and latency must be positive");
      if (i > 0 && (levels[i].capacity_bytes <= levels[i - 1].capacity_bytes ||
                    levels[i].latency_cycles <= levels[i - 1].latency_cycles)) {
        fail("levels must increase in capacity and latency");
      }
    }
    if (!(dram_latency_cycles > levels.back().latency_cycles)) fail("dram latency must exceed the last level");
    if (line_size_bytes == 0) fail("line size must be positive");
    for (double v : {freq_ghz, issue_latency_cycles, per_thread_stream_gbps, read_peak_gbps, write_peak_gbps,
                     streaming_store_factor, shared_floor_fraction, remote_latency_cycles, double_math_cost_factor,
                     math_cycles_per_element}) {
      if (!(v > 0) || !std::isfinite(v)) fail("rates and factors must be positive");
    }
    if (cores < 1 || smt < 1 || lanes_dp < 1) fail("cores, smt and lanes must be >= 1");
    for (const auto& [name, lat] : op_latency_cycles) {
      if (!(lat > 0)) fail("op latency for '" + name + "' must be positive");
    }
  }

  bool operator==(const SyntheticHierarchy&) const = default;
};

/// Pointer-chase latency in ns. The size selects the level that holds the
/// array; strides below a line blend linearly between the next-smaller
/// level (hit) and that level (miss).
inline double synth_chase_latency(const SyntheticHierarchy& m, std::uint64_t size_bytes, std::uint64_t stride_bytes) {
  std::size_t fit = 0;
  while (fit < m.levels.size() && m.levels[fit].capacity_bytes < size_bytes) ++fit;
  const double upper = fit < m.levels.size() ? m.levels[fit].latency_cycles : m.dram_latency_cycles;
  const double lower = fit == 0 ? upper : m.levels[fit - 1].latency_cycles;
  const double miss_fraction =
      std::min(static_cast<double>(stride_bytes) / static_cast<double>(m.line_size_bytes), 1.0);
  const double cycles = lower + miss_fraction * (upper - lower);
  return cycles / m.freq_ghz;
}

inline double synth_peak(const SyntheticHierarchy& m, BandwidthKind kind) {
  switch (kind) {
    case BandwidthKind::Write: return m.write_peak_gbps;
    case BandwidthKind::WriteStreaming: return m.write_peak_gbps * m.streaming_store_factor;
    default: return m.read_peak_gbps;
  }
}

/// Bandwidth in GB/s: linear in threads up to the kind's peak. Shared data
/// decays as base/threads down to a floor; a stanza length applies the
/// prefetch ramp stanza / (stanza + ramp).
inline double synth_bandwidth(const SyntheticHierarchy& m, BandwidthKind kind, std::size_t threads, bool shared,
                              std::optional<std::uint64_t> stanza_elems = std::nullopt) {
  if (threads < 1) throw Error(ErrorCode::InvalidArgument, "threads must be >= 1");
  const double n = static_cast<double>(threads);
  double result = std::min(n * m.per_thread_stream_gbps, synth_peak(m, kind));
  if (shared) result = std::max(result / n, m.shared_floor_fraction * m.per_thread_stream_gbps);
  if (stanza_elems) {
    const double s = static_cast<double>(*stanza_elems);
    result *= s / (s + static_cast<double>(m.prefetch_ramp_elems));
  }
  return result;
}

/// Fraction of a core's issue slots filled: each thread interleaves
/// `streams` independent chains, so latency is hidden once
/// streams * threads_on_core reaches the issue latency.
inline double synth_issue_fraction(const SyntheticHierarchy& m, int streams, std::size_t threads_on_core) {
  return std::min(static_cast<double>(streams) * static_cast<double>(threads_on_core) / m.issue_latency_cycles, 1.0);
}

/// Peak GFlops of one fully occupied core.
inline double synth_core_peak_gflops(const SyntheticHierarchy& m, ArithMix mix, int lanes) {
  return static_cast<double>(lanes) * flops_per_element(mix) * m.freq_ghz;
}

inline std::optional<double> synth_op_latency(const SyntheticHierarchy& m, const std::string& op) {
  if (auto it = m.op_latency_cycles.find(op); it != m.op_latency_cycles.end()) return it->second;
  return std::nullopt;
}

inline double synth_math_ns_per_element(const SyntheticHierarchy& m, Precision p) {
  const double cycles = m.math_cycles_per_element * (p == Precision::Double ? m.double_math_cost_factor : 1.0);
  return cycles / m.freq_ghz;
}

/// Remote transfer cost per line; a local run sees the local chase latency
/// for the working set at line stride.
inline double synth_line_transfer_cycles(const SyntheticHierarchy& m, bool local, std::uint64_t working_set_bytes) {
  if (local) return synth_chase_latency(m, working_set_bytes, m.line_size_bytes) * m.freq_ghz;
  return m.remote_latency_cycles;
}

namespace detail {

inline double require_value(const KeyValueEntry& e) {
  if (!e.value) throw ParseError(e.line, "'" + e.key + "' needs a value");
  return *e.value;
}

inline std::uint64_t require_bytes(const KeyValueEntry& e) {
  const double v = require_value(e);
  const auto mult = byte_multiplier(e.unit);
  if (!mult) throw ParseError(e.line, "'" + e.key + "' expects a size unit, got '" + e.unit + "'");
  return static_cast<std::uint64_t>(std::llround(v * *mult));
}

inline int require_count(const KeyValueEntry& e) {
  const double v = require_value(e);
  if (v < 0 || v != std::floor(v)) throw ParseError(e.line, "'" + e.key + "' must be a whole number");
  return static_cast<int>(v);
}

}  // namespace detail

/// Parses a model config. Every key is optional and overrides the default
/// (Xeon Phi 5110) value; `lN.capacity` / `lN.latency` entries, when any
/// are present, replace the whole level list.
inline SyntheticHierarchy parse_model(std::string_view text) {
  SyntheticHierarchy m;
  std::map<int, SyntheticLevel> levels;
  std::map<int, std::size_t> level_lines;
  for (const auto& e : parse_key_values(text)) {
    const std::string& k = e.key;
    if (k.size() > 2 && k[0] == 'l' && std::isdigit(static_cast<unsigned char>(k[1]))) {
      const auto dot = k.find('.');
      if (dot == std::string::npos) throw ParseError(e.line, "expected lN.capacity or lN.latency");
      const int idx = std::stoi(k.substr(1, dot - 1));
      const std::string field = k.substr(dot + 1);
      if (field == "capacity") {
        levels[idx].capacity_bytes = detail::require_bytes(e);
      } else if (field == "latency") {
        levels[idx].latency_cycles = detail::require_value(e);
      } else {
        throw ParseError(e.line, "unknown level field '" + field + "'");
      }
      level_lines[idx] = e.line;
      continue;
    }
    if (k.rfind("op.", 0) == 0) {
      m.op_latency_cycles[k.substr(3)] = detail::require_value(e);
      continue;
    }
    if (k == "line_size") m.line_size_bytes = detail::require_bytes(e);
    else if (k == "dram_latency") m.dram_latency_cycles = detail::require_value(e);
    else if (k == "freq") m.freq_ghz = detail::require_value(e);
    else if (k == "cores") m.cores = detail::require_count(e);
    else if (k == "smt") m.smt = detail::require_count(e);
    else if (k == "lanes_dp") m.lanes_dp = detail::require_count(e);
    else if (k == "issue_latency") m.issue_latency_cycles = detail::require_value(e);
    else if (k == "per_thread_stream") m.per_thread_stream_gbps = detail::require_value(e);
    else if (k == "read_peak") m.read_peak_gbps = detail::require_value(e);
    else if (k == "write_peak") m.write_peak_gbps = detail::require_value(e);
    else if (k == "streaming_store_factor") m.streaming_store_factor = detail::require_value(e);
    else if (k == "shared_floor_fraction") m.shared_floor_fraction = detail::require_value(e);
    else if (k == "remote_latency") m.remote_latency_cycles = detail::require_value(e);
    else if (k == "prefetch_ramp") m.prefetch_ramp_elems = static_cast<std::uint64_t>(detail::require_count(e));
    else if (k == "double_math_cost_factor") m.double_math_cost_factor = detail::require_value(e);
    else if (k == "math_cycles_per_element") m.math_cycles_per_element = detail::require_value(e);
    else throw ParseError(e.line, "unknown model key '" + k + "'");
  }
  if (!levels.empty()) {
    m.levels.clear();
    for (const auto& [idx, level] : levels) {
      if (level.capacity_bytes == 0 || level.latency_cycles <= 0) {
        throw ParseError(level_lines[idx], "level l" + std::to_string(idx) + " needs capacity and latency");
      }
      m.levels.push_back(level);
    }
  }
  m.validate();
  return m;
}

inline SyntheticHierarchy load_model(const std::filesystem::path& path) { return parse_model(read_text_file(path)); }

/// Serializes a model in the config format; parse_model() reads it back.
inline std::string model_to_text(const SyntheticHierarchy& m) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < m.levels.size(); ++i) {
    os << 'l' << (i + 1) << ".capacity = " << m.levels[i].capacity_bytes << " bytes\n";
    os << 'l' << (i + 1) << ".latency = " << m.levels[i].latency_cycles << " cycles\n";
  }
  os << "line_size = " << m.line_size_bytes << " bytes\n"
     << "dram_latency = " << m.dram_latency_cycles << " cycles\n"
     << "freq = " << m.freq_ghz << " GHz\n"
     << "cores = " << m.cores << '\n'
     << "smt = " << m.smt << '\n'
     << "lanes_dp = " << m.lanes_dp << '\n'
     << "issue_latency = " << m.issue_latency_cycles << " cycles\n"
     << "per_thread_stream = " << m.per_thread_stream_gbps << " GB/s\n"
     << "read_peak = " << m.read_peak_gbps << " GB/s\n"
     << "write_peak = " << m.write_peak_gbps << " GB/s\n"
     << "streaming_store_factor = " << m.streaming_store_factor << '\n'
     << "shared_floor_fraction = " << m.shared_floor_fraction << '\n'
     << "remote_latency = " << m.remote_latency_cycles << " cycles\n"
     << "prefetch_ramp = " << m.prefetch_ramp_elems << " elements\n"
     << "double_math_cost_factor = " << m.double_math_cost_factor << '\n'
     << "math_cycles_per_element = " << m.math_cycles_per_element << " cycles\n";
  for (const auto& [name, lat] : m.op_latency_cycles) os << "op." << name << " = " << lat << " cycles\n";
  return os.str();
}

}  // namespace archprobe
