#include <gtest/gtest.h>

#include <chrono>
#include <cmath>

#include "archprobe/archprobe.hpp"

using namespace archprobe;

namespace {

/// A small sweep keeps the live suite fast.
LiveBackend& backend() {
  static LiveBackend b(discover_live_topology(), 64u << 20);
  return b;
}

RunProtocol quick() {
  RunProtocol p;
  p.warm_passes = 1;
  p.repetitions = 5;
  return p;
}

double chase_ns(std::uint64_t size, std::uint64_t stride, std::uint64_t iters = 2'000'000) {
  return chase_latency(make_chase_geometry(size, stride), iters, quick(), backend());
}

}  // namespace

TEST(Live, CalibrationIsSane) {
  const auto& c = backend().calibration();
  EXPECT_GT(c.resolution_ns, 0.0);
  EXPECT_LT(c.resolution_ns, 10'000.0);
  EXPECT_GT(c.cycles_per_ns, 0.1);
  EXPECT_LT(c.cycles_per_ns, 10.0);
}

TEST(Live, ChaseLatencyGrowsWithWorkingSet) {
  const double near = chase_ns(16u << 10, 64);
  const double mid = chase_ns(1u << 20, 4096);
  const double far = chase_ns(256u << 20, 4096, 500'000);
  EXPECT_LT(near, mid);
  EXPECT_LT(mid, far);
  EXPECT_GT(near, 0.1);
}

TEST(Live, ChaseResultIsTheWalkEndpoint) {
  const auto g = make_chase_geometry(64u << 10, 256);
  EXPECT_EQ(backend().chase(g, 1000, {}), (1000 % g.elements()) * g.stride_elements() % g.elements());
}

TEST(Live, SinkedChaseCannotBeElided) {
  ChaseArray chase(make_chase_geometry(16u << 10, 64));
  constexpr std::uint64_t iters = 20'000'000;
  const auto t0 = std::chrono::steady_clock::now();
  const auto end = live::chase_loop<true>(chase.indices().data(), iters);
  const auto t1 = std::chrono::steady_clock::now();
  do_not_optimize(end);
  const double ns = std::chrono::duration<double, std::nano>(t1 - t0).count() / iters;
  EXPECT_GE(ns, 0.5) << "each dependent load must cost at least a fraction of a nanosecond";
}

TEST(Live, ChainLatencyIsPlausible) {
  ChainSpec add;
  add.op_kind = OpKind::Add;
  add.lane_width = 1;
  const double cycles = instruction_chain_latency(add, quick(), backend(), 2'000'000);
  EXPECT_GT(cycles, 0.5);
  EXPECT_LT(cycles, 20.0);
}

TEST(Live, ReadBandwidthAtLeastMatchesWrite) {
  const auto place = parse_placement("scatter");
  const double read = bandwidth(BandwidthKind::Read, 1, place, 64u << 20, false, true, quick(), backend());
  const double write = bandwidth(BandwidthKind::Write, 1, place, 64u << 20, false, true, quick(), backend());
  EXPECT_GT(read, 0.5);
  EXPECT_GT(write, 0.1);
  EXPECT_GE(read * 1.1, write);
}

TEST(Live, MathOutputsMatchTheStandardLibrary) {
  const auto inputs = math_inputs(512, 3);
  for (const auto& [fn, name] : kMathFnNames) {
    const auto d = math_function_bench(MathJob{fn, Precision::Double, inputs, 200}, quick(), backend());
    const auto s = math_function_bench(MathJob{fn, Precision::Single, inputs, 200}, quick(), backend());
    ASSERT_EQ(d.outputs.size(), inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      EXPECT_EQ(d.outputs[i], apply_math(fn, inputs[i])) << name;
      EXPECT_EQ(s.outputs[i], static_cast<double>(apply_math(fn, static_cast<float>(inputs[i])))) << name;
    }
  }
}

TEST(Live, CoherencyNeedsTwoCores) {
  const auto& topo = backend().topology();
  if (topo.core_count() < 2) {
    EXPECT_THROW(remote_latency_matrix({1}, {CoherencyState::Modified}, {4096}, quick(), backend()), Error);
    GTEST_SKIP() << "single-core host";
  }
  const int reader = topo.cores()[0].hw_threads.front();
  const int owner = topo.cores()[1].hw_threads.front();
  const double remote =
      remote_latency(CoherencyRun{owner, reader, CoherencyState::Modified, 16u << 10, false}, quick(), backend())
          .cycles_per_line;
  const double local =
      remote_latency(CoherencyRun{reader, reader, CoherencyState::Modified, 16u << 10, true}, quick(), backend())
          .cycles_per_line;
  EXPECT_GT(remote, local);
}
