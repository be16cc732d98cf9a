#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "archprobe/backend.hpp"
#include "archprobe/kernels.hpp"
#include "archprobe/timekit.hpp"

namespace archprobe {

inline constexpr std::uint64_t kCoherencyLineBytes = 64;
inline constexpr std::uint64_t kMaxCoherencyWorkingSet = 128u << 10;

struct CoherencyRun {
  int owner_cpu = 0;
  int reader_cpu = 1;
  CoherencyState state = CoherencyState::Modified;
  std::uint64_t working_set_bytes = 16u << 10;
  /// Owner and reader on the same cpu; only meaningful as a baseline.
  bool local = false;

  std::uint64_t lines() const { return working_set_bytes / kCoherencyLineBytes; }

  void validate() const {
    if (working_set_bytes == 0 || working_set_bytes % kCoherencyLineBytes != 0 ||
        working_set_bytes > kMaxCoherencyWorkingSet) {
      throw Error(ErrorCode::InvalidArgument, "working set must be a positive multiple of 64 bytes, at most 128 KiB");
    }
    if (local != (owner_cpu == reader_cpu)) {
      throw Error(ErrorCode::InvalidArgument, local ? "a local run needs owner == reader"
                                                    : "a remote run needs distinct owner and reader cpus");
    }
  }
};

enum class LineAction { Write, Read, Evict };

inline std::string_view to_string(LineAction a) {
  switch (a) {
    case LineAction::Write: return "write";
    case LineAction::Read: return "read";
    case LineAction::Evict: return "evict";
  }
  return "?";
}

inline std::string_view to_string(Actor a) { return a == Actor::Owner ? "owner" : "reader"; }

struct PlacementStep {
  Actor actor = Actor::Owner;
  LineAction action = LineAction::Read;
  int phase = 0;

  bool operator==(const PlacementStep&) const = default;
};

using PlacementTrace = std::vector<PlacementStep>;

/// The phase sequence that leaves the lines in `state`. The Exclusive sweep
/// runs on both agents so no copy survives from an earlier timed pass.
inline PlacementTrace placement_sequence(CoherencyState state) {
  switch (state) {
    case CoherencyState::Modified: return {{Actor::Owner, LineAction::Write, 0}};
    case CoherencyState::Exclusive:
      return {{Actor::Owner, LineAction::Evict, 0}, {Actor::Reader, LineAction::Evict, 0}, {Actor::Owner, LineAction::Read, 1}};
    case CoherencyState::Shared:
      return {{Actor::Owner, LineAction::Read, 0},
              {Actor::Reader, LineAction::Read, 1},
              {Actor::Reader, LineAction::Evict, 2}};
  }
  return {};
}

/// Executes the placement phases on `session` and returns what was done.
inline PlacementTrace place_lines(const CoherencyRun& run, CoherencySession& session) {
  run.validate();
  PlacementTrace trace;
  for (const PlacementStep& step : placement_sequence(run.state)) {
    switch (step.action) {
      case LineAction::Write: session.write_lines(step.actor); break;
      case LineAction::Read: session.read_lines(step.actor); break;
      case LineAction::Evict: session.evict_lines(step.actor); break;
    }
    trace.push_back(step);
  }
  return trace;
}

struct RemoteLatencyResult {
  double cycles_per_line = 0.0;
  PlacementTrace trace;
};

/// Cycles per line for the reader to pull lines placed by the owner. Every
/// pass, warm or timed, is preceded by a fresh placement.
inline RemoteLatencyResult remote_latency(const CoherencyRun& run, const RunProtocol& protocol, Backend& backend) {
  run.validate();
  const TimerCalibration& calib = backend.calibration();
  auto session = backend.open_coherency(run.owner_cpu, run.reader_cpu, run.working_set_bytes);
  RemoteLatencyResult result;
  result.trace = place_lines(run, *session);
  RunProtocol replace = protocol;
  replace.flush_between = true;
  const Sample s = run_protocol(
      backend.clock(), replace, static_cast<double>(session->lines()), [&] { return session->timed_chase(); },
      [&] { place_lines(run, *session); });
  detail::require_enough_work(s, calib, "remote latency");
  result.cycles_per_line = calib.to_cycles(s.per_unit(calib));
  return result;
}

/// 1 KiB .. 128 KiB by powers of two.
inline std::vector<std::uint64_t> default_coherency_working_sets() { return powers_of_two(1u << 10, 128u << 10); }

/// Reader-core offsets D+1, D+2, D+4, ... D+32, D-16, ... D-2.
inline std::vector<int> default_core_offsets() { return {1, 2, 4, 8, 16, 32, -16, -8, -4, -2}; }

/// Default offsets that land on distinct cores other than core 0.
inline std::vector<int> core_offsets_for(int cores) {
  std::vector<int> out;
  std::vector<bool> used(static_cast<std::size_t>(std::max(cores, 1)), false);
  if (cores > 0) used[0] = true;
  for (int offset : default_core_offsets()) {
    const int core = cores > 0 ? ((offset % cores) + cores) % cores : 0;
    if (!used[static_cast<std::size_t>(core)]) {
      used[static_cast<std::size_t>(core)] = true;
      out.push_back(offset);
    }
  }
  return out;
}

inline std::string offset_label(int offset) {
  return offset >= 0 ? "D+" + std::to_string(offset) : "D" + std::to_string(offset);
}

struct CoherencyCell {
  int offset = 0;
  CoherencyState state = CoherencyState::Modified;
  int owner_cpu = 0;
  int reader_cpu = 0;
  /// Median over working-set sizes.
  double cycles = 0.0;
  std::vector<double> per_working_set;

  bool operator==(const CoherencyCell&) const = default;
};

struct CoherencyMatrix {
  std::vector<std::uint64_t> working_sets;
  std::vector<CoherencyCell> cells;

  /// Median of every cell's per-working-set values.
  double overall() const {
    std::vector<double> all;
    for (const auto& c : cells) all.insert(all.end(), c.per_working_set.begin(), c.per_working_set.end());
    return median(all);
  }

  bool operator==(const CoherencyMatrix&) const = default;
};

/// The reader stays on the first hw thread of core 0; the owner moves to
/// core (offset mod cores).
inline CoherencyMatrix remote_latency_matrix(const std::vector<int>& offsets, const std::vector<CoherencyState>& states,
                                             const std::vector<std::uint64_t>& working_sets,
                                             const RunProtocol& protocol, Backend& backend) {
  const CpuTopology& topo = backend.topology();
  const int cores = static_cast<int>(topo.core_count());
  if (cores < 2) throw Error(ErrorCode::InvalidArgument, "remote latency needs at least two cores");
  if (working_sets.empty()) throw Error(ErrorCode::InvalidArgument, "no working-set sizes given");
  CoherencyMatrix m{working_sets, {}};
  const int reader = topo.cores()[0].hw_threads.front();
  for (int offset : offsets) {
    const int core = ((offset % cores) + cores) % cores;
    if (core == 0) throw Error(ErrorCode::InvalidArgument, "offset " + offset_label(offset) + " lands on core 0");
    const int owner = topo.cores()[static_cast<std::size_t>(core)].hw_threads.front();
    for (CoherencyState state : states) {
      CoherencyCell cell{offset, state, owner, reader, 0.0, {}};
      for (std::uint64_t ws : working_sets) {
        cell.per_working_set.push_back(
            remote_latency(CoherencyRun{owner, reader, state, ws, false}, protocol, backend).cycles_per_line);
      }
      cell.cycles = median(cell.per_working_set);
      m.cells.push_back(std::move(cell));
    }
  }
  return m;
}

}  // namespace archprobe
