#pragma once

// Turns measurement surfaces into a simplified machine model and compares
// that model against documented values.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "archprobe/error.hpp"
#include "archprobe/kernel_types.hpp"
#include "archprobe/keyvalue.hpp"
#include "archprobe/timekit.hpp"
#include "archprobe/topo.hpp"

namespace archprobe {

inline constexpr double kKneeRatio = 1.5;
inline constexpr double kLineSaturation = 0.95;
inline constexpr double kDatasheetTolerancePct = 15.0;

/// Indices i where the two-point plateau after i sits at least
/// `ratio_threshold` times above the two-point plateau before it (windows
/// are truncated at the ends). Competing candidates closer than two
/// positions are resolved in favour of the larger single-step jump
/// y[i] / y[i-1], then the larger plateau ratio.
inline std::vector<std::size_t> detect_knees(const std::vector<double>& x, const std::vector<double>& y,
                                             double ratio_threshold = kKneeRatio) {
  const std::size_t n = y.size();
  if (x.size() != n) throw Error(ErrorCode::InvalidArgument, "knee detection: x and y differ in length");
  if (n < 4) throw Error(ErrorCode::InvalidArgument, "knee detection needs at least 4 points");
  for (std::size_t i = 0; i < n; ++i) {
    if (!(y[i] > 0) || !std::isfinite(y[i])) throw Error(ErrorCode::InvalidArgument, "knee detection: y must be positive");
    if (i > 0 && !(x[i] > x[i - 1])) throw Error(ErrorCode::InvalidArgument, "knee detection: x must ascend strictly");
  }

  struct Candidate {
    std::size_t index;
    double step;
    double plateau;
  };
  std::vector<Candidate> candidates;
  for (std::size_t i = 1; i < n; ++i) {
    const std::vector<double> before(y.begin() + static_cast<std::ptrdiff_t>(i >= 2 ? i - 2 : 0),
                                     y.begin() + static_cast<std::ptrdiff_t>(i));
    const std::vector<double> after(y.begin() + static_cast<std::ptrdiff_t>(i),
                                    y.begin() + static_cast<std::ptrdiff_t>(std::min(i + 2, n)));
    const double plateau = median(after) / median(before);
    if (plateau >= ratio_threshold) candidates.push_back({i, y[i] / y[i - 1], plateau});
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.step != b.step) return a.step > b.step;
    return a.plateau > b.plateau;
  });
  std::vector<std::size_t> knees;
  for (const auto& c : candidates) {
    const bool clear = std::all_of(knees.begin(), knees.end(), [&](std::size_t k) {
      return (k > c.index ? k - c.index : c.index - k) >= 2;
    });
    if (clear) knees.push_back(c.index);
  }
  std::sort(knees.begin(), knees.end());
  return knees;
}

struct CacheLevel {
  std::uint64_t capacity_bytes = 0;
  double latency_cycles = 0.0;
  double latency_ns = 0.0;

  bool operator==(const CacheLevel&) const = default;
};

struct HierarchyInference {
  std::vector<CacheLevel> levels;
  std::uint64_t line_size_bytes = 0;
  std::optional<double> dram_latency_cycles;
  std::optional<double> dram_latency_ns;
  /// Set when no capacity knee was found; `levels` then holds one
  /// placeholder level spanning the whole grid.
  bool warning = false;
  std::vector<std::size_t> knees;
};

namespace detail {

inline double segment_median(const std::vector<double>& y, std::size_t begin, std::size_t end) {
  return median(std::vector<double>(y.begin() + static_cast<std::ptrdiff_t>(begin),
                                    y.begin() + static_cast<std::ptrdiff_t>(end)));
}

/// Smallest stride whose latency, taken as the median over rows [begin, end),
/// reaches kLineSaturation of the largest such median.
inline std::uint64_t saturating_stride(const LatencyGrid& grid, std::size_t begin, std::size_t end) {
  std::vector<double> per_stride;
  for (std::size_t s = 0; s < grid.strides.size(); ++s) {
    std::vector<double> column;
    for (std::size_t r = begin; r < end; ++r) column.push_back(grid.latency_ns[r][s]);
    per_stride.push_back(median(column));
  }
  const double peak = *std::max_element(per_stride.begin(), per_stride.end());
  for (std::size_t s = 0; s < per_stride.size(); ++s) {
    if (per_stride[s] >= kLineSaturation * peak) return grid.strides[s];
  }
  return grid.strides.back();
}

}  // namespace detail

/// Capacities come from knees in the largest-stride latency-vs-size curve;
/// each capacity is the last size before its knee. Level latencies are the
/// plateau medians, the final plateau is memory, and the line size is read
/// off the first band past the first knee.
inline HierarchyInference infer_hierarchy(const LatencyGrid& grid, const TimerCalibration& calib) {
  grid.validate();
  if (grid.sizes.size() < 4) throw Error(ErrorCode::InvalidArgument, "latency grid needs at least 4 sizes");
  std::vector<double> x(grid.sizes.begin(), grid.sizes.end());
  std::vector<double> y;
  for (const auto& row : grid.latency_ns) y.push_back(row.back());

  HierarchyInference out;
  out.knees = detect_knees(x, y);
  auto level = [&](std::uint64_t capacity, double ns) { return CacheLevel{capacity, calib.to_cycles(ns), ns}; };

  if (out.knees.empty()) {
    out.warning = true;
    out.levels.push_back(level(grid.sizes.back(), detail::segment_median(y, 0, y.size())));
    out.line_size_bytes = detail::saturating_stride(grid, 0, grid.sizes.size());
    return out;
  }

  std::size_t begin = 0;
  for (std::size_t k : out.knees) {
    out.levels.push_back(level(grid.sizes[k - 1], detail::segment_median(y, begin, k)));
    begin = k;
  }
  const double dram_ns = detail::segment_median(y, begin, y.size());
  out.dram_latency_ns = dram_ns;
  out.dram_latency_cycles = calib.to_cycles(dram_ns);

  const std::size_t band_begin = out.knees[0];
  const std::size_t band_end = out.knees.size() > 1 ? out.knees[1] : grid.sizes.size();
  out.line_size_bytes = detail::saturating_stride(grid, band_begin, band_end);
  return out;
}

struct MachineModel {
  int core_count = 0;
  int smt_per_core = 0;
  int vector_lanes_dp = 0;
  std::vector<CacheLevel> cache_levels;
  std::uint64_t line_size_bytes = 0;
  std::optional<double> dram_latency_cycles;
  double read_peak_gbps = 0.0;
  std::optional<double> write_peak_gbps;
  double per_thread_stream_gbps = 0.0;
  std::optional<double> remote_latency_cycles;
  std::optional<double> peak_gflops;
  bool hierarchy_warning = false;

  /// Names the first violated invariant, or returns an empty string.
  std::string invariant_violation() const {
    const auto ls = line_size_bytes;
    if (ls < 16 || ls > 512 || (ls & (ls - 1)) != 0) return "line size is not a power of two in [16, 512]";
    for (std::size_t i = 0; i < cache_levels.size(); ++i) {
      const auto& l = cache_levels[i];
      if (l.capacity_bytes == 0 || !(l.latency_cycles > 0) || !(l.latency_ns > 0)) return "cache level not positive";
      if (i > 0 && (l.capacity_bytes <= cache_levels[i - 1].capacity_bytes ||
                    l.latency_cycles <= cache_levels[i - 1].latency_cycles)) {
        return "cache levels not strictly increasing";
      }
    }
    if (read_peak_gbps < per_thread_stream_gbps) return "read peak below single-thread bandwidth";
    if (write_peak_gbps && *write_peak_gbps <= 0) return "write peak not positive";
    return {};
  }

  bool operator==(const MachineModel&) const = default;
};

/// Everything build_machine_model can draw on. Only the latency grid and a
/// disjoint read curve are mandatory.
struct MeasurementSet {
  std::optional<LatencyGrid> latency_grid;
  std::vector<BandwidthCurve> bandwidth_curves;
  std::optional<double> remote_latency_cycles;
  std::optional<double> peak_gflops;
  int vector_lanes_dp = 8;
};

inline MachineModel build_machine_model(const MeasurementSet& in, const CpuTopology& topology,
                                        const TimerCalibration& calib) {
  std::vector<std::string> missing;
  if (!in.latency_grid) missing.push_back("latency grid");
  const auto is_read = [](const BandwidthCurve& c) {
    return c.kind == BandwidthKind::Read && !c.shared && !c.points.empty();
  };
  if (std::none_of(in.bandwidth_curves.begin(), in.bandwidth_curves.end(), is_read)) {
    missing.push_back("read bandwidth curve");
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw Error(ErrorCode::MissingInput, "machine model needs: " + list);
  }

  MachineModel model;
  model.core_count = static_cast<int>(topology.core_count());
  model.smt_per_core = static_cast<int>(topology.max_smt());
  model.vector_lanes_dp = in.vector_lanes_dp;

  const HierarchyInference h = infer_hierarchy(*in.latency_grid, calib);
  model.cache_levels = h.levels;
  model.line_size_bytes = h.line_size_bytes;
  model.dram_latency_cycles = h.dram_latency_cycles;
  model.hierarchy_warning = h.warning;

  std::size_t fewest_threads = 0;
  for (const auto& curve : in.bandwidth_curves) {
    if (curve.shared) continue;
    for (const auto& p : curve.points) {
      if (curve.kind == BandwidthKind::Read) {
        model.read_peak_gbps = std::max(model.read_peak_gbps, p.gbps);
        if (fewest_threads == 0 || p.threads < fewest_threads) {
          fewest_threads = p.threads;
          model.per_thread_stream_gbps = p.gbps;
        }
      } else if (curve.kind == BandwidthKind::Write || curve.kind == BandwidthKind::WriteStreaming) {
        model.write_peak_gbps = std::max(model.write_peak_gbps.value_or(0.0), p.gbps);
      }
    }
  }
  model.remote_latency_cycles = in.remote_latency_cycles;
  model.peak_gflops = in.peak_gflops;
  return model;
}

/// Named, comparable model quantities. Latencies are in cycles, sizes in
/// bytes, bandwidths in GB/s.
inline std::vector<std::pair<std::string, double>> model_metrics(const MachineModel& m) {
  std::vector<std::pair<std::string, double>> out;
  if (m.core_count > 0) out.emplace_back("cores", m.core_count);
  if (m.smt_per_core > 0) out.emplace_back("smt", m.smt_per_core);
  if (m.vector_lanes_dp > 0) out.emplace_back("lanes_dp", m.vector_lanes_dp);
  for (std::size_t i = 0; i < m.cache_levels.size(); ++i) {
    const std::string prefix = "l" + std::to_string(i + 1);
    out.emplace_back(prefix + "_capacity", static_cast<double>(m.cache_levels[i].capacity_bytes));
    out.emplace_back(prefix + "_latency", m.cache_levels[i].latency_cycles);
  }
  if (m.line_size_bytes > 0) out.emplace_back("line_size", static_cast<double>(m.line_size_bytes));
  if (m.dram_latency_cycles) out.emplace_back("dram_latency", *m.dram_latency_cycles);
  if (m.read_peak_gbps > 0) out.emplace_back("read_bandwidth", m.read_peak_gbps);
  if (m.write_peak_gbps) out.emplace_back("write_bandwidth", *m.write_peak_gbps);
  if (m.per_thread_stream_gbps > 0) out.emplace_back("per_thread_bandwidth", m.per_thread_stream_gbps);
  if (m.remote_latency_cycles) out.emplace_back("remote_latency", *m.remote_latency_cycles);
  if (m.peak_gflops) out.emplace_back("peak_gflops", *m.peak_gflops);
  return out;
}

struct DatasheetEntry {
  std::string metric;
  std::optional<double> documented;
  std::string unit;
  std::size_t line = 0;

  bool operator==(const DatasheetEntry&) const = default;
};

/// `metric = value unit` lines; `N/A` marks a metric the vendor does not
/// document. Sizes (`*_capacity`, `line_size`) accept K/M/G units.
inline std::vector<DatasheetEntry> parse_datasheet(std::string_view text) {
  std::vector<DatasheetEntry> out;
  for (const auto& e : parse_key_values(text)) {
    DatasheetEntry d{e.key, e.value, e.unit, e.line};
    const bool is_size = e.key == "line_size" || (e.key.size() > 9 && e.key.ends_with("_capacity"));
    if (is_size && d.documented) {
      const auto mult = byte_multiplier(e.unit);
      if (!mult) throw ParseError(e.line, "'" + e.key + "' expects a size unit, got '" + e.unit + "'");
      d.documented = *d.documented * *mult;
      d.unit = "bytes";
    }
    out.push_back(std::move(d));
  }
  return out;
}

inline std::vector<DatasheetEntry> load_datasheet(const std::filesystem::path& path) {
  return parse_datasheet(read_text_file(path));
}

enum class Verdict { Match, Mismatch, Undocumented, Unmeasured };

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Match: return "match";
    case Verdict::Mismatch: return "mismatch";
    case Verdict::Undocumented: return "undocumented";
    case Verdict::Unmeasured: return "unmeasured";
  }
  return "?";
}

inline Verdict parse_verdict(std::string_view s) {
  for (Verdict v : {Verdict::Match, Verdict::Mismatch, Verdict::Undocumented, Verdict::Unmeasured}) {
    if (to_string(v) == s) return v;
  }
  throw Error(ErrorCode::Parse, "unknown verdict '" + std::string(s) + "'");
}

struct DatasheetClaim {
  std::string metric;
  std::optional<double> documented;
  std::optional<double> measured;
  Verdict verdict = Verdict::Undocumented;

  bool operator==(const DatasheetClaim&) const = default;
};

inline Verdict judge(std::optional<double> documented, std::optional<double> measured, double tolerance_pct) {
  if (!documented) return Verdict::Undocumented;
  if (!measured) return Verdict::Unmeasured;
  const double d = *documented;
  const double m = *measured;
  if (d == 0.0) return m == 0.0 ? Verdict::Match : Verdict::Mismatch;
  return std::abs(m - d) / std::abs(d) * 100.0 > tolerance_pct ? Verdict::Mismatch : Verdict::Match;
}

/// One claim per datasheet entry in file order, followed by measured
/// metrics the datasheet does not mention.
inline std::vector<DatasheetClaim> compare_metrics(const std::vector<std::pair<std::string, double>>& measured,
                                                   const std::vector<DatasheetEntry>& datasheet,
                                                   double tolerance_pct = kDatasheetTolerancePct) {
  if (!(tolerance_pct >= 0)) throw Error(ErrorCode::InvalidArgument, "tolerance must be non-negative");
  auto lookup = [&](const std::string& metric) -> std::optional<double> {
    for (const auto& [name, value] : measured) {
      if (name == metric) return value;
    }
    return std::nullopt;
  };
  std::vector<DatasheetClaim> out;
  for (const auto& entry : datasheet) {
    const auto m = lookup(entry.metric);
    out.push_back({entry.metric, entry.documented, m, judge(entry.documented, m, tolerance_pct)});
  }
  for (const auto& [name, value] : measured) {
    const bool listed = std::any_of(datasheet.begin(), datasheet.end(),
                                    [&](const DatasheetEntry& e) { return e.metric == name; });
    if (!listed) out.push_back({name, std::nullopt, value, Verdict::Undocumented});
  }
  return out;
}

inline std::vector<DatasheetClaim> compare_datasheet(const MachineModel& model,
                                                     const std::vector<DatasheetEntry>& datasheet,
                                                     double tolerance_pct = kDatasheetTolerancePct) {
  return compare_metrics(model_metrics(model), datasheet, tolerance_pct);
}

}  // namespace archprobe
