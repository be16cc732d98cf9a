#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "archprobe/backend.hpp"
#include "archprobe/synthmodel.hpp"

namespace archprobe {

struct SyntheticOptions {
  double clock_step_ns = 10.0;
  /// Multiplicative noise: every modeled duration is scaled by a uniform
  /// factor in [1 - noise, 1 + noise].
  double noise = 0.0;
  std::uint64_t seed = 1;
};

/// Backend whose kernels cost exactly what the synthetic model predicts.
/// Time is virtual, so results are bit-deterministic for a fixed model,
/// options and call sequence.
class SyntheticBackend final : public Backend {
 public:
  explicit SyntheticBackend(SyntheticHierarchy model = {}, SyntheticOptions options = {})
      : model_(std::move(model)),
        options_(options),
        clock_(options.clock_step_ns, model_.freq_ghz),
        topology_(CpuTopology::uniform(model_.cores, model_.smt)),
        rng_(options.seed) {
    model_.validate();
    if (!(options_.clock_step_ns > 0)) throw Error(ErrorCode::InvalidArgument, "clock step must be positive");
    if (options_.noise < 0 || options_.noise >= 1) throw Error(ErrorCode::InvalidArgument, "noise must be in [0, 1)");
  }

  std::string name() const override { return "synthetic"; }
  Clock& clock() override { return clock_; }
  const CpuTopology& topology() const override { return topology_; }
  void flush_caches() override { ++flush_count_; }

  const SyntheticHierarchy& model() const { return model_; }
  int flush_count() const { return flush_count_; }

  std::uint64_t chase(const ChaseGeometry& g, std::uint64_t iters, std::span<const std::uint64_t>) override {
    spend(static_cast<double>(iters) * synth_chase_latency(model_, g.size_bytes, g.stride_bytes));
    return (iters % g.elements()) * g.stride_elements() % g.elements();
  }

  void chain(const ChainSpec& spec, std::uint64_t executions) override {
    spec.validate();
    const double first = op_latency(spec.op_name());
    double per_chain;
    if (spec.pair_mode) {
      per_chain = static_cast<double>(spec.chain_len / 2) * (first + op_latency(spec.partner_name()));
    } else {
      per_chain = static_cast<double>(spec.chain_len) * first;
    }
    spend(static_cast<double>(executions) * per_chain / model_.freq_ghz);
  }

  std::unique_ptr<PreparedRun> prepare_arith(const ArithJob& job) override {
    std::map<int, std::size_t> per_core;
    for (int cpu : job.cpus) ++per_core[core_of(cpu)];
    const double per_thread_flops = static_cast<double>(job.streams) * job.lanes * static_cast<double>(job.iters) *
                                    flops_per_element(job.mix);
    double elapsed = 0.0;
    for (const auto& [core, threads] : per_core) {
      const double rate = synth_core_peak_gflops(model_, job.mix, model_.lanes_dp) *
                          synth_issue_fraction(model_, job.streams, threads);
      elapsed = std::max(elapsed, static_cast<double>(threads) * per_thread_flops / rate);
    }
    return std::make_unique<ModeledRun>(*this, elapsed);
  }

  std::unique_ptr<PreparedRun> prepare_bandwidth(const BandwidthJob& job) override {
    const std::size_t threads = job.cpus.size();
    double gbps = synth_bandwidth(model_, job.kind, threads, job.shared);
    std::set<int> cores;
    for (int cpu : job.cpus) cores.insert(core_of(cpu));
    // Threads stacked on one core share its single memory pipe.
    if (cores.size() == 1) gbps = std::min(gbps, model_.per_thread_stream_gbps);
    const double bytes = static_cast<double>(job.buffer_bytes / 8) * useful_bytes_per_element(job.kind);
    return std::make_unique<ModeledRun>(*this, bytes / gbps);
  }

  std::unique_ptr<PreparedRun> prepare_striad(const StriadJob& job) override {
    const auto touched = striad_touched_elements(job.total_bytes / 8, job.stanza_elems, job.jump_elems);
    const double gbps = synth_bandwidth(model_, BandwidthKind::Triad, 1, false, job.stanza_elems);
    return std::make_unique<ModeledRun>(*this, 24.0 * static_cast<double>(touched) / gbps);
  }

  std::unique_ptr<MathRun> prepare_math(const MathJob& job) override {
    return std::make_unique<ModeledMath>(*this, job);
  }

  std::unique_ptr<CoherencySession> open_coherency(int owner_cpu, int reader_cpu,
                                                   std::uint64_t working_set_bytes) override {
    core_of(owner_cpu);
    core_of(reader_cpu);
    return std::make_unique<ModeledCoherency>(*this, owner_cpu == reader_cpu, working_set_bytes);
  }

  bool supports_shared(BandwidthKind) const override { return true; }

 private:
  class ModeledRun final : public PreparedRun {
   public:
    ModeledRun(SyntheticBackend& b, double elapsed_ns) : backend_(b), elapsed_ns_(elapsed_ns) {}
    void run_pass() override { backend_.spend(elapsed_ns_); }

   private:
    SyntheticBackend& backend_;
    double elapsed_ns_;
  };

  class ModeledMath final : public MathRun {
   public:
    ModeledMath(SyntheticBackend& b, const MathJob& job) : backend_(b), job_(job) {}

    void run_pass() override {
      outputs_.resize(job_.inputs.size());
      for (std::size_t i = 0; i < job_.inputs.size(); ++i) {
        outputs_[i] = job_.precision == Precision::Single
                          ? static_cast<double>(apply_math(job_.fn, static_cast<float>(job_.inputs[i])))
                          : apply_math(job_.fn, job_.inputs[i]);
      }
      backend_.spend(static_cast<double>(job_.reps) * static_cast<double>(job_.inputs.size()) *
                     synth_math_ns_per_element(backend_.model_, job_.precision));
    }

    std::vector<double> outputs() const override { return outputs_; }

   private:
    SyntheticBackend& backend_;
    MathJob job_;
    std::vector<double> outputs_;
  };

  /// Tracks which agents hold the lines: a timed read hits locally when the
  /// reader holds them, transfers from the other core when only the owner
  /// does, and goes to memory otherwise.
  class ModeledCoherency final : public CoherencySession {
   public:
    ModeledCoherency(SyntheticBackend& b, bool local, std::uint64_t ws)
        : backend_(b), local_(local), working_set_(ws) {}

    void write_lines(Actor who) override {
      holders_.clear();
      holders_.insert(agent(who));
    }
    void read_lines(Actor who) override { holders_.insert(agent(who)); }
    void evict_lines(Actor who) override { holders_.erase(agent(who)); }

    double timed_chase() override {
      const auto& m = backend_.model_;
      double cycles;
      if (holders_.count(agent(Actor::Reader)) != 0) {
        cycles = synth_line_transfer_cycles(m, true, working_set_);
      } else if (!holders_.empty()) {
        cycles = synth_line_transfer_cycles(m, false, working_set_);
      } else {
        cycles = m.dram_latency_cycles;
      }
      holders_.insert(agent(Actor::Reader));
      Clock& clock = backend_.clock_;
      const double t0 = clock.now_ns();
      backend_.spend(static_cast<double>(lines()) * cycles / m.freq_ghz);
      const double t1 = clock.now_ns();
      return t1 - t0;
    }

    std::uint64_t lines() const override { return working_set_ / 64; }

   private:
    // A local run has one agent playing both roles.
    int agent(Actor who) const { return local_ || who == Actor::Owner ? 0 : 1; }

    SyntheticBackend& backend_;
    bool local_;
    std::uint64_t working_set_;
    std::set<int> holders_;
  };

  double op_latency(const std::string& name) const {
    const auto lat = synth_op_latency(model_, name);
    if (!lat) throw Error(ErrorCode::Capability, "synthetic model has no latency for op '" + name + "'");
    return *lat;
  }

  int core_of(int cpu) const {
    const int idx = topology_.core_index_of(cpu);
    if (idx < 0) throw Error(ErrorCode::InvalidArgument, "cpu " + std::to_string(cpu) + " not in synthetic topology");
    return idx;
  }

  void spend(double ns) {
    if (options_.noise > 0) {
      // 53 random bits -> [0, 1); fixed mapping keeps runs reproducible.
      const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
      ns *= 1.0 + options_.noise * (2.0 * u - 1.0);
    }
    clock_.advance(ns);
  }

  SyntheticHierarchy model_;
  SyntheticOptions options_;
  SteppingClock clock_;
  CpuTopology topology_;
  std::mt19937_64 rng_;
  int flush_count_ = 0;
};

}  // namespace archprobe
