#pragma once

// Execution backend: where kernels actually run. The live backend executes
// real loops on pinned threads; the synthetic backend advances a virtual
// clock by the cost the analytical model predicts. Kernels time both through
// the same protocol code.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "archprobe/chase.hpp"
#include "archprobe/kernel_types.hpp"
#include "archprobe/timekit.hpp"
#include "archprobe/topo.hpp"

namespace archprobe {

struct ArithJob {
  std::vector<int> cpus;  // one worker per entry
  int streams = 1;
  ArithMix mix = ArithMix::Mad;
  int lanes = 8;
  std::uint64_t iters = 0;  // per stream, per thread
};

struct BandwidthJob {
  BandwidthKind kind = BandwidthKind::Read;
  std::vector<int> cpus;
  PlacementPattern placement = placement::Compact{};
  std::uint64_t buffer_bytes = 0;  // per array, across all threads
  bool shared = false;
  bool software_prefetch = true;
};

struct StriadJob {
  std::uint64_t total_bytes = 0;  // per array
  std::uint64_t stanza_elems = 0;
  std::uint64_t jump_elems = 0;
};

struct MathJob {
  MathFn fn = MathFn::ExpE;
  Precision precision = Precision::Single;
  std::vector<double> inputs;
  std::uint64_t reps = 0;
};

/// One prepared measurement; run_pass() executes a single pass and is what
/// the protocol times.
class PreparedRun {
 public:
  virtual ~PreparedRun() = default;
  virtual void run_pass() = 0;
};

class MathRun : public PreparedRun {
 public:
  /// Results of the most recent pass, widened to double.
  virtual std::vector<double> outputs() const = 0;
};

enum class Actor { Owner, Reader };

/// Two pinned agents sharing a line-granular buffer. Each call completes
/// (including a full fence on the acting thread) before returning.
class CoherencySession {
 public:
  virtual ~CoherencySession() = default;
  virtual void write_lines(Actor who) = 0;
  virtual void read_lines(Actor who) = 0;
  virtual void evict_lines(Actor who) = 0;
  /// Reader chases one pointer per line; returns elapsed ns measured on
  /// the reader's thread.
  virtual double timed_chase() = 0;
  virtual std::uint64_t lines() const = 0;
};

class Backend {
 public:
  virtual ~Backend() = default;

  virtual std::string name() const = 0;
  virtual Clock& clock() = 0;
  virtual const CpuTopology& topology() const = 0;
  virtual void flush_caches() = 0;

  /// Calibrates clock() on first use and caches the result.
  const TimerCalibration& calibration() {
    if (!calibration_) calibration_ = calibrate_timer(clock(), calibration_options());
    return *calibration_;
  }

  /// Walks k = A[k] `iters` times and returns the final index. `indices`
  /// may be empty, in which case the backend materializes the array.
  virtual std::uint64_t chase(const ChaseGeometry& geometry, std::uint64_t iters,
                              std::span<const std::uint64_t> indices) = 0;

  /// Executes `executions` back-to-back dependent chains.
  virtual void chain(const ChainSpec& spec, std::uint64_t executions) = 0;

  virtual std::unique_ptr<PreparedRun> prepare_arith(const ArithJob& job) = 0;
  virtual std::unique_ptr<PreparedRun> prepare_bandwidth(const BandwidthJob& job) = 0;
  virtual std::unique_ptr<PreparedRun> prepare_striad(const StriadJob& job) = 0;
  virtual std::unique_ptr<MathRun> prepare_math(const MathJob& job) = 0;
  virtual std::unique_ptr<CoherencySession> open_coherency(int owner_cpu, int reader_cpu,
                                                           std::uint64_t working_set_bytes) = 0;

  virtual bool supports_shared(BandwidthKind kind) const = 0;

 protected:
  virtual CalibrationOptions calibration_options() const { return {}; }

 private:
  std::optional<TimerCalibration> calibration_;
};

}  // namespace archprobe
