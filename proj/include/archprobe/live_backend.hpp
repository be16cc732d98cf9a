#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unistd.h>
#include <vector>

#include "archprobe/aligned_buffer.hpp"
#include "archprobe/backend.hpp"
#include "archprobe/live_kernels.hpp"
#include "archprobe/workers.hpp"

namespace archprobe {

namespace detail {

/// Splits [0, n) into `parts` contiguous slices whose starts are multiples
/// of `align` elements.
inline std::vector<std::pair<std::size_t, std::size_t>> split_range(std::size_t n, std::size_t parts,
                                                                    std::size_t align) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const std::size_t blocks = n / align;
  std::size_t begin = 0;
  for (std::size_t p = 0; p < parts; ++p) {
    std::size_t end = p + 1 == parts ? n : (blocks * (p + 1) / parts) * align;
    out.emplace_back(begin, end);
    begin = end;
  }
  return out;
}

inline std::size_t private_cache_bytes() {
  long l2 = 0;
#ifdef _SC_LEVEL2_CACHE_SIZE
  l2 = sysconf(_SC_LEVEL2_CACHE_SIZE);
#endif
  return l2 > 0 ? static_cast<std::size_t>(l2) : (1u << 20);
}

}  // namespace detail

/// Runs kernels on the host CPU with pinned worker threads.
class LiveBackend final : public Backend {
 public:
  LiveBackend() : topology_(discover_live_topology()) {}
  explicit LiveBackend(CpuTopology topology, std::size_t flush_bytes = default_flush_bytes())
      : topology_(std::move(topology)), flusher_(flush_bytes) {}

  std::string name() const override { return "live"; }
  Clock& clock() override { return clock_; }
  const CpuTopology& topology() const override { return topology_; }
  void flush_caches() override { flusher_(); }

  std::uint64_t chase(const ChaseGeometry& g, std::uint64_t iters, std::span<const std::uint64_t> indices) override {
    if (indices.empty()) {
      if (!chase_cache_ || chase_cache_->geometry() != g) chase_cache_.emplace(g);
      indices = chase_cache_->indices();
    }
    return live::chase_loop(indices.data(), iters);
  }

  void chain(const ChainSpec& spec, std::uint64_t executions) override {
    spec.validate();
    switch (spec.lane_width) {
      case 1: return chain_width<1>(spec, executions);
      case 2: return chain_width<2>(spec, executions);
      case 4: return chain_width<4>(spec, executions);
      case 8: return chain_width<8>(spec, executions);
      default: break;
    }
    throw Error(ErrorCode::Capability, "lane width " + std::to_string(spec.lane_width) + " not supported");
  }

  std::unique_ptr<PreparedRun> prepare_arith(const ArithJob& job) override {
    if (job.streams < 1 || job.streams > 2) throw Error(ErrorCode::InvalidArgument, "streams must be 1 or 2");
    if (job.mix == ArithMix::Mad && !live::have_fma()) {
      throw Error(ErrorCode::Capability, "mad mix needs fused multiply-add support in this build");
    }
    std::function<void(std::uint64_t)> body;
    const bool mad = job.mix == ArithMix::Mad;
    auto pick = [&]<int W>() -> std::function<void(std::uint64_t)> {
      if (mad) return job.streams == 1 ? live::arith_loop<W, true, 1> : live::arith_loop<W, true, 2>;
      return job.streams == 1 ? live::arith_loop<W, false, 1> : live::arith_loop<W, false, 2>;
    };
    switch (job.lanes) {
      case 1: body = pick.template operator()<1>(); break;
      case 2: body = pick.template operator()<2>(); break;
      case 4: body = pick.template operator()<4>(); break;
      case 8: body = pick.template operator()<8>(); break;
      default: throw Error(ErrorCode::Capability, "lane width " + std::to_string(job.lanes) + " not supported");
    }
    return std::make_unique<ArithRun>(job.cpus, std::move(body), job.iters);
  }

  std::unique_ptr<PreparedRun> prepare_bandwidth(const BandwidthJob& job) override {
    if (job.shared && !supports_shared(job.kind)) {
      throw Error(ErrorCode::Capability, "shared buffers are only supported for the read kernel");
    }
    if (job.kind == BandwidthKind::WriteStreaming && !live::have_streaming_stores()) {
      throw Error(ErrorCode::Capability, "streaming stores not available in this build");
    }
    return std::make_unique<BandwidthRun>(job);
  }

  std::unique_ptr<PreparedRun> prepare_striad(const StriadJob& job) override {
    return std::make_unique<StriadRun>(job);
  }

  std::unique_ptr<MathRun> prepare_math(const MathJob& job) override { return std::make_unique<LiveMath>(job); }

  std::unique_ptr<CoherencySession> open_coherency(int owner_cpu, int reader_cpu,
                                                   std::uint64_t working_set_bytes) override {
    for (int cpu : {owner_cpu, reader_cpu}) {
      if (!topology_.contains(cpu)) {
        throw Error(ErrorCode::InvalidArgument, "cpu " + std::to_string(cpu) + " not in topology");
      }
    }
    return std::make_unique<LiveCoherency>(owner_cpu, reader_cpu, working_set_bytes);
  }

  bool supports_shared(BandwidthKind kind) const override { return kind == BandwidthKind::Read; }

 private:
  template <int W>
  void chain_width(const ChainSpec& spec, std::uint64_t executions) {
    if (W * 8 > live::native_vector_bytes() && W > 1) {
      throw Error(ErrorCode::Capability, std::to_string(W) + "-lane vectors not supported by this build");
    }
    using V = typename live::lanes_of<W>::d;
    const std::string first = spec.op_name();
    const std::string second = spec.partner_name();
    const bool conversion = first == "cvtpd2ps" || first == "cvtps2pd";

    if (conversion) {
      if constexpr (W == 2) {
        throw Error(ErrorCode::Capability, "conversion chains need 1, 4 or 8 lanes");
      } else {
        if (!spec.pair_mode || (second != "cvtpd2ps" && second != "cvtps2pd") || second == first) {
          throw Error(ErrorCode::Capability, "conversions chain only as a cvtpd2ps/cvtps2pd pair");
        }
        using F = typename live::lanes_of<W>::f;
        V x = V{} + 1.5;
        live::launder(x);
        const std::uint64_t pairs = executions * static_cast<std::uint64_t>(spec.chain_len / 2);
        x = live::dependent_steps(x, pairs, [](V v) {
          F f;
          if constexpr (W == 1) {
            f = static_cast<float>(v);
          } else {
            f = __builtin_convertvector(v, F);
          }
          live::launder(f);
          if constexpr (W == 1) {
            return static_cast<double>(f);
          } else {
            return __builtin_convertvector(f, V);
          }
        });
        do_not_optimize(x);
        return;
      }
    }

    for (const auto& name : {first, second}) {
      if (name == "fma" && !live::have_fma()) throw Error(ErrorCode::Capability, "fma not available in this build");
      if (name != "add" && name != "mul" && name != "div" && name != "fma") {
        throw Error(ErrorCode::Capability, "operation '" + name + "' not supported by the live backend");
      }
    }

    // Operands keep x near 1: no overflow, no denormals.
    V x = V{} + 1.0;
    V y_add = V{} + 1e-9;
    V y_mul = V{} + (1.0 + 1e-12);
    V z = V{} + 1e-9;
    live::launder(y_add);
    live::launder(y_mul);
    live::launder(z);
    const std::uint64_t ops = executions * static_cast<std::uint64_t>(spec.chain_len);
    auto run_single = [&](auto step) { x = live::dependent_steps(x, ops, step); };
    auto run_pair = [&](auto s1, auto s2) {
      x = live::dependent_steps(x, ops / 2, [&](V v) {
        v = s1(v);
        live::launder(v);
        return s2(v);
      });
    };
    auto with_op = [&](const std::string& name, auto&& k) {
      if (name == "add") return k([y_add](V v) { return v + y_add; });
      if (name == "mul") return k([y_mul](V v) { return v * y_mul; });
      if (name == "div") return k([y_mul](V v) { return v / y_mul; });
      return k([y_mul, z](V v) { return live::fused_multiply_add(v, y_mul, z); });
    };
    if (!spec.pair_mode) {
      with_op(first, [&](auto s) { run_single(s); });
    } else {
      with_op(first, [&](auto s1) { with_op(second, [&](auto s2) { run_pair(s1, s2); }); });
    }
    do_not_optimize(x);
  }

  class ArithRun final : public PreparedRun {
   public:
    ArithRun(std::vector<int> cpus, std::function<void(std::uint64_t)> body, std::uint64_t iters)
        : team_(std::move(cpus)), body_(std::move(body)), iters_(iters) {}
    void run_pass() override {
      team_.run([this](std::size_t) { body_(iters_); });
    }

   private:
    WorkerTeam team_;
    std::function<void(std::uint64_t)> body_;
    std::uint64_t iters_;
  };

  class BandwidthRun final : public PreparedRun {
   public:
    explicit BandwidthRun(const BandwidthJob& job) : job_(job), team_(job.cpus) {
      const std::size_t n = job.buffer_bytes / 8;
      for (int k = 0; k < arrays_per_kind(job.kind); ++k) arrays_.emplace_back(n, kChaseAlignment);
      slices_ = job.shared ? std::vector<std::pair<std::size_t, std::size_t>>(job.cpus.size(), {0, n})
                           : detail::split_range(n, job.cpus.size(), 8);
      // First touch from the owning worker places pages near it.
      team_.run([this](std::size_t w) {
        if (job_.shared && w != 0) return;
        const auto [b, e] = slices_[w];
        for (auto& a : arrays_) std::fill(a.data() + b, a.data() + e, 1.0);
      });
    }

    void run_pass() override {
      team_.run([this](std::size_t w) { job_.software_prefetch ? body<true>(w) : body<false>(w); });
    }

   private:
    template <bool P>
    void body(std::size_t w) {
      const auto [b, e] = slices_[w];
      const std::size_t n = e - b;
      double* a0 = arrays_[0].data() + b;
      double* a1 = arrays_.size() > 1 ? arrays_[1].data() + b : nullptr;
      double* a2 = arrays_.size() > 2 ? arrays_[2].data() + b : nullptr;
      const double s = scalar_;
      const double* pf[3] = {a0, a1, a2};
      switch (job_.kind) {
        case BandwidthKind::Read: live::read_kernel<P>(a0, n); break;
        case BandwidthKind::Write: live::write_kernel<P>(a0, n, s); break;
        case BandwidthKind::WriteStreaming: live::write_streaming_kernel(a0, n, s); break;
        case BandwidthKind::Scale1:  // a0 = s * a1
          live::stream_kernel<P>(n, pf, 2, [=](std::size_t i) { a0[i] = s * a1[i]; });
          break;
        case BandwidthKind::Scale2:
          live::stream_kernel<P>(n, pf, 1, [=](std::size_t i) { a0[i] = s * a0[i]; });
          break;
        case BandwidthKind::Saxpy1:  // a0 = s * a1 + a2
          live::stream_kernel<P>(n, pf, 3, [=](std::size_t i) { a0[i] = s * a1[i] + a2[i]; });
          break;
        case BandwidthKind::Saxpy2:  // a0 = s * a1 + a0
          live::stream_kernel<P>(n, pf, 2, [=](std::size_t i) { a0[i] = s * a1[i] + a0[i]; });
          break;
        case BandwidthKind::Triad:  // a0 = a1 + s * a2
          live::stream_kernel<P>(n, pf, 3, [=](std::size_t i) { a0[i] = a1[i] + s * a2[i]; });
          break;
      }
    }

    BandwidthJob job_;
    WorkerTeam team_;
    std::vector<AlignedBuffer<double>> arrays_;
    std::vector<std::pair<std::size_t, std::size_t>> slices_;
    double scalar_ = 1.0;
  };

  class StriadRun final : public PreparedRun {
   public:
    explicit StriadRun(const StriadJob& job)
        : job_(job), a_(job.total_bytes / 8, kChaseAlignment), b_(a_.size(), kChaseAlignment),
          c_(a_.size(), kChaseAlignment) {
      std::fill(b_.data(), b_.data() + b_.size(), 1.0);
      std::fill(c_.data(), c_.data() + c_.size(), 2.0);
    }

    void run_pass() override {
      const std::size_t n = a_.size();
      double* a = a_.data();
      const double* b = b_.data();
      const double* c = c_.data();
      double s = 0.5;
      live::launder(s);
      for (std::size_t start = 0; start < n; start += job_.stanza_elems + job_.jump_elems) {
        const std::size_t end = std::min<std::size_t>(start + job_.stanza_elems, n);
#pragma GCC unroll 16
        for (std::size_t i = start; i < end; ++i) a[i] = b[i] + s * c[i];
      }
      clobber_memory();
    }

   private:
    StriadJob job_;
    AlignedBuffer<double> a_, b_, c_;
  };

  class LiveMath final : public MathRun {
   public:
    explicit LiveMath(const MathJob& job) : job_(job) {
      const std::size_t n = job.inputs.size();
      if (job.precision == Precision::Single) {
        in_f_.resize(n);
        out_f_.resize(n);
        for (std::size_t i = 0; i < n; ++i) in_f_[i] = static_cast<float>(job.inputs[i]);
      } else {
        in_d_ = job.inputs;
        out_d_.resize(n);
      }
    }

    void run_pass() override {
      if (job_.precision == Precision::Single) {
        loop(in_f_, out_f_);
      } else {
        loop(in_d_, out_d_);
      }
    }

    std::vector<double> outputs() const override {
      if (job_.precision == Precision::Double) return out_d_;
      return std::vector<double>(out_f_.begin(), out_f_.end());
    }

   private:
    template <class T>
    void loop(const std::vector<T>& in, std::vector<T>& out) {
      const std::size_t n = in.size();
      const T* src = in.data();
      T* dst = out.data();
      for (std::uint64_t r = 0; r < job_.reps; ++r) {
        switch (job_.fn) {
          case MathFn::ExpE: for (std::size_t k = 0; k < n; ++k) dst[k] = std::exp(src[k]); break;
          case MathFn::Exp2: for (std::size_t k = 0; k < n; ++k) dst[k] = std::exp2(src[k]); break;
          case MathFn::LogE: for (std::size_t k = 0; k < n; ++k) dst[k] = std::log(src[k]); break;
          case MathFn::Log2: for (std::size_t k = 0; k < n; ++k) dst[k] = std::log2(src[k]); break;
        }
        // Forces every repetition to recompute.
        clobber_memory();
      }
    }

    MathJob job_;
    std::vector<float> in_f_, out_f_;
    std::vector<double> in_d_, out_d_;
  };

  /// Two pinned agents (one when owner == reader) sharing a chain of lines:
  /// the first word of each line holds the index of the next line.
  class LiveCoherency final : public CoherencySession {
   public:
    LiveCoherency(int owner, int reader, std::uint64_t ws)
        : local_(owner == reader),
          team_(local_ ? std::vector<int>{owner} : std::vector<int>{owner, reader}),
          lines_(ws / 64),
          buffer_(lines_ * 8, kChaseAlignment) {
      for (std::uint64_t i = 0; i < lines_; ++i) buffer_[i * 8] = ((i + 1) % lines_) * 8;
      const std::size_t sweep = std::max<std::size_t>(4 * detail::private_cache_bytes(), 4u << 20);
      for (std::size_t i = 0; i < team_.size(); ++i) sweeps_.emplace_back(sweep);
    }

    void write_lines(Actor who) override {
      on(who, [this] {
        for (std::uint64_t i = 0; i < lines_; ++i) buffer_[i * 8] = ((i + 1) % lines_) * 8;
      });
    }

    void read_lines(Actor who) override {
      on(who, [this] {
        std::uint64_t sum = 0;
        for (std::uint64_t i = 0; i < lines_; ++i) sum += buffer_[i * 8];
        do_not_optimize(sum);
      });
    }

    void evict_lines(Actor who) override {
      on(who, [this, who] { sweeps_[slot(who)](); });
    }

    double timed_chase() override {
      double elapsed = 0.0;
      on(Actor::Reader, [&] {
        SteadyClock clock;
        const double t0 = clock.now_ns();
        const std::uint64_t k = live::chase_loop(buffer_.data(), lines_);
        const double t1 = clock.now_ns();
        do_not_optimize(k);
        elapsed = t1 - t0;
      });
      return elapsed;
    }

    std::uint64_t lines() const override { return lines_; }

   private:
    std::size_t slot(Actor who) const { return local_ || who == Actor::Owner ? 0 : 1; }

    template <class F>
    void on(Actor who, F&& f) {
      const std::size_t target = slot(who);
      team_.run([&](std::size_t w) {
        if (w == target) f();
        std::atomic_thread_fence(std::memory_order_seq_cst);
      });
    }

    bool local_;
    WorkerTeam team_;
    std::uint64_t lines_;
    AlignedBuffer<std::uint64_t> buffer_;
    std::vector<CacheFlusher> sweeps_;
  };

  SteadyClock clock_;
  CpuTopology topology_;
  CacheFlusher flusher_;
  std::optional<ChaseArray> chase_cache_;
};

}  // namespace archprobe
