#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <thread>

#include "archprobe/topo.hpp"
#include "support.hpp"

using namespace archprobe;
using archprobe::testing::source_path;

namespace {

std::map<int, std::size_t> threads_per_core(const CpuTopology& topo, const std::vector<int>& cpus) {
  std::map<int, std::size_t> out;
  for (int cpu : cpus) ++out[topo.core_index_of(cpu)];
  return out;
}

/// Random topology: 1-16 cores with 1-4 hw threads each and shuffled ids.
CpuTopology random_topology(std::mt19937_64& rng) {
  const int cores = 1 + static_cast<int>(rng() % 16);
  std::vector<int> ids;
  std::vector<std::size_t> widths;
  int total = 0;
  for (int c = 0; c < cores; ++c) {
    widths.push_back(1 + rng() % 4);
    total += static_cast<int>(widths.back());
  }
  for (int i = 0; i < total; ++i) ids.push_back(i);
  std::shuffle(ids.begin(), ids.end(), rng);
  std::vector<CoreInfo> list;
  std::size_t next = 0;
  for (int c = 0; c < cores; ++c) {
    CoreInfo core{c * 3, {}};
    for (std::size_t t = 0; t < widths[static_cast<std::size_t>(c)]; ++t) core.hw_threads.push_back(ids[next++]);
    list.push_back(core);
  }
  return CpuTopology(list);
}

}  // namespace

TEST(Topology, UniformLayout) {
  const auto t = CpuTopology::uniform(60, 4);
  EXPECT_EQ(t.core_count(), 60u);
  EXPECT_EQ(t.cpu_count(), 240u);
  EXPECT_EQ(t.max_smt(), 4u);
  EXPECT_EQ(t.core_index_of(0), 0);
  EXPECT_EQ(t.core_index_of(7), 1);
  EXPECT_EQ(t.core_index_of(239), 59);
  EXPECT_EQ(t.core_index_of(240), -1);
}

TEST(Topology, RejectsDuplicatesAndEmptyCores) {
  EXPECT_THROW(CpuTopology({{0, {0, 1}}, {1, {1}}}), Error);
  EXPECT_THROW(CpuTopology({{0, {0}}, {0, {1}}}), Error);
  EXPECT_THROW(CpuTopology(std::vector<CoreInfo>{{0, {}}}), Error);
}

TEST(Topology, NormalizesOrder) {
  const CpuTopology t({{5, {9, 3}}, {1, {2, 0}}});
  EXPECT_EQ(t.cores()[0].core_id, 1);
  EXPECT_EQ(t.cores()[0].hw_threads, (std::vector<int>{0, 2}));
  EXPECT_EQ(t.cores()[1].hw_threads, (std::vector<int>{3, 9}));
  EXPECT_EQ(t.describe(), "1:0,2;5:3,9;");
}

TEST(TopologyFixture, ParsesAndDropsOffline) {
  const auto t = load_topology_fixture(source_path("tests/fixtures/small_smt2.topo"));
  EXPECT_EQ(t.core_count(), 4u);
  EXPECT_EQ(t.cpu_count(), 7u);
  EXPECT_EQ(t.cores()[0].hw_threads, (std::vector<int>{0, 4}));
  EXPECT_EQ(t.cores()[3].hw_threads, (std::vector<int>{3}));
}

TEST(TopologyFixture, ErrorsCarryLineNumbers) {
  try {
    parse_topology_fixture("0 0\n1 zero\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(parse_topology_fixture("0 0\n0 1\n"), ParseError);
  EXPECT_THROW(parse_topology_fixture("0 0 sleepy\n"), ParseError);
  EXPECT_THROW(parse_topology_fixture("# nothing\n"), ParseError);
  EXPECT_THROW(load_topology_fixture("/nonexistent/fixture"), Error);
}

TEST(TopologyDiscovery, ReadsFakeSysfsWithinAffinity) {
  const auto t = discover_live_topology(source_path("tests/fixtures/sysfs/cpu"));
  cpu_set_t mask;
  CPU_ZERO(&mask);
  ASSERT_EQ(sched_getaffinity(0, sizeof(mask), &mask), 0);
  std::map<int, std::vector<int>> expected;  // core_id = cpu % 2 in the fixture
  for (int cpu = 0; cpu < 4; ++cpu) {
    if (CPU_ISSET(cpu, &mask)) expected[cpu % 2].push_back(cpu);
  }
  if (expected.empty()) GTEST_SKIP() << "affinity mask excludes every fixture cpu";
  ASSERT_EQ(t.core_count(), expected.size());
  std::size_t i = 0;
  for (const auto& [core, cpus] : expected) EXPECT_EQ(t.cores()[i++].hw_threads, cpus);
}

TEST(TopologyDiscovery, LiveSystemHasAtLeastOneCpu) {
  const auto t = discover_live_topology();
  EXPECT_GE(t.cpu_count(), 1u);
}

TEST(Placement, ScatterSpreadsBeforeStacking) {
  const auto t = CpuTopology::uniform(60, 4);
  for (auto [n, per_core] : {std::pair{240u, 4u}, {120u, 2u}, {60u, 1u}}) {
    const auto cpus = assign_threads(t, n, placement::Scatter{});
    const auto counts = threads_per_core(t, cpus);
    EXPECT_EQ(counts.size(), 60u) << n;
    for (const auto& [core, count] : counts) EXPECT_EQ(count, per_core) << n;
  }
  const auto thirty = threads_per_core(t, assign_threads(t, 30, placement::Scatter{}));
  EXPECT_EQ(thirty.size(), 30u);
}

TEST(Placement, CompactFillsCoresInOrder) {
  const auto t = CpuTopology::uniform(4, 4);
  EXPECT_EQ(assign_threads(t, 6, placement::Compact{}), (std::vector<int>{0, 1, 2, 3, 4, 5}));
}

TEST(Placement, SameCoreStaysOnFirstCore) {
  const auto t = CpuTopology::uniform(4, 4);
  EXPECT_EQ(assign_threads(t, 3, placement::SameCore{}), (std::vector<int>{0, 1, 2}));
  EXPECT_THROW(assign_threads(t, 5, placement::SameCore{}), Error);
}

TEST(Placement, ExplicitValidatesIds) {
  const auto t = CpuTopology::uniform(2, 2);
  EXPECT_EQ(assign_threads(t, 2, placement::Explicit{{3, 0}}), (std::vector<int>{3, 0}));
  EXPECT_THROW(assign_threads(t, 2, placement::Explicit{{3}}), Error);
  EXPECT_THROW(assign_threads(t, 2, placement::Explicit{{3, 3}}), Error);
  EXPECT_THROW(assign_threads(t, 1, placement::Explicit{{9}}), Error);
}

TEST(Placement, RandomIsSeedDeterministic) {
  const auto t = CpuTopology::uniform(60, 4);
  const auto a = assign_threads(t, 60, placement::Random{7});
  EXPECT_EQ(a, assign_threads(t, 60, placement::Random{7}));
  EXPECT_NE(a, assign_threads(t, 60, placement::Random{8}));
  // One round covers every core once before any core takes a second thread.
  EXPECT_EQ(threads_per_core(t, a).size(), 60u);
}

TEST(Placement, ThreadCountBounds) {
  const auto t = CpuTopology::uniform(2, 2);
  EXPECT_THROW(assign_threads(t, 0, placement::Compact{}), Error);
  EXPECT_THROW(assign_threads(t, 5, placement::Compact{}), Error);
}

TEST(Placement, TextRoundTrip) {
  for (const PlacementPattern& p : std::vector<PlacementPattern>{placement::Compact{}, placement::Scatter{},
                                                                 placement::Random{42}, placement::SameCore{},
                                                                 placement::Explicit{{1, 5, 3}}}) {
    EXPECT_EQ(parse_placement(to_string(p)), p) << to_string(p);
  }
  for (const char* bad : {"", "random", "random:x", "explicit:", "explicit:a", "spread"}) {
    EXPECT_THROW(parse_placement(bad), Error) << bad;
  }
}

// Property: every pattern returns n distinct cpus from the topology, and
// scatter uses one thread per core while n fits in the core count.
TEST(Placement, PropertyOverRandomTopologies) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const auto t = random_topology(rng);
    const std::size_t n = 1 + rng() % t.cpu_count();
    for (const PlacementPattern& p :
         std::vector<PlacementPattern>{placement::Compact{}, placement::Scatter{}, placement::Random{rng()}}) {
      const auto cpus = assign_threads(t, n, p);
      ASSERT_EQ(cpus.size(), n);
      std::set<int> distinct(cpus.begin(), cpus.end());
      ASSERT_EQ(distinct.size(), n) << to_string(p);
      for (int cpu : cpus) ASSERT_TRUE(t.contains(cpu));
    }
    const auto counts = threads_per_core(t, assign_threads(t, n, placement::Scatter{}));
    if (n <= t.core_count()) {
      for (const auto& [core, count] : counts) ASSERT_EQ(count, 1u) << "trial " << trial;
    }
  }
}

TEST(Pinning, PinsToAnAllowedCpuAndRejectsBogusIds) {
  cpu_set_t mask;
  CPU_ZERO(&mask);
  ASSERT_EQ(sched_getaffinity(0, sizeof(mask), &mask), 0);
  int allowed = -1;
  for (int c = 0; c < CPU_SETSIZE && allowed < 0; ++c) {
    if (CPU_ISSET(c, &mask)) allowed = c;
  }
  ASSERT_GE(allowed, 0);
  std::thread([&] {
    EXPECT_NO_THROW(pin_current_thread(allowed));
    try {
      pin_current_thread(CPU_SETSIZE - 1);
      ADD_FAILURE() << "pinning to an absent cpu succeeded";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::Pinning);
    }
  }).join();
}
