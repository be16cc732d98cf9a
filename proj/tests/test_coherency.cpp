#include <gtest/gtest.h>

#include <memory>
#include <string>
#include <vector>

#include "archprobe/coherency.hpp"
#include "archprobe/synthetic_backend.hpp"

using namespace archprobe;

namespace {

/// Forwards to a synthetic session and logs every call.
class RecordingSession final : public CoherencySession {
 public:
  RecordingSession(std::unique_ptr<CoherencySession> inner, std::vector<std::string>& log)
      : inner_(std::move(inner)), log_(log) {}

  void write_lines(Actor who) override {
    log_.push_back(std::string(to_string(who)) + " write");
    inner_->write_lines(who);
  }
  void read_lines(Actor who) override {
    log_.push_back(std::string(to_string(who)) + " read");
    inner_->read_lines(who);
  }
  void evict_lines(Actor who) override {
    log_.push_back(std::string(to_string(who)) + " evict");
    inner_->evict_lines(who);
  }
  double timed_chase() override {
    log_.push_back("chase");
    return inner_->timed_chase();
  }
  std::uint64_t lines() const override { return inner_->lines(); }

 private:
  std::unique_ptr<CoherencySession> inner_;
  std::vector<std::string>& log_;
};

/// Synthetic backend whose coherency sessions are recorded.
class RecordingBackend final : public Backend {
 public:
  std::vector<std::string> log;

  std::string name() const override { return inner_.name(); }
  Clock& clock() override { return inner_.clock(); }
  const CpuTopology& topology() const override { return inner_.topology(); }
  void flush_caches() override { inner_.flush_caches(); }
  std::uint64_t chase(const ChaseGeometry& g, std::uint64_t iters, std::span<const std::uint64_t> idx) override {
    return inner_.chase(g, iters, idx);
  }
  void chain(const ChainSpec& s, std::uint64_t e) override { inner_.chain(s, e); }
  std::unique_ptr<PreparedRun> prepare_arith(const ArithJob& j) override { return inner_.prepare_arith(j); }
  std::unique_ptr<PreparedRun> prepare_bandwidth(const BandwidthJob& j) override { return inner_.prepare_bandwidth(j); }
  std::unique_ptr<PreparedRun> prepare_striad(const StriadJob& j) override { return inner_.prepare_striad(j); }
  std::unique_ptr<MathRun> prepare_math(const MathJob& j) override { return inner_.prepare_math(j); }
  std::unique_ptr<CoherencySession> open_coherency(int owner, int reader, std::uint64_t ws) override {
    return std::make_unique<RecordingSession>(inner_.open_coherency(owner, reader, ws), log);
  }
  bool supports_shared(BandwidthKind k) const override { return inner_.supports_shared(k); }

 private:
  SyntheticBackend inner_;
};

std::vector<std::string> describe(const PlacementTrace& trace) {
  std::vector<std::string> out;
  for (const auto& s : trace) out.push_back(std::string(to_string(s.actor)) + " " + std::string(to_string(s.action)));
  return out;
}

RunProtocol few() {
  RunProtocol p;
  p.repetitions = 5;
  return p;
}

}  // namespace

TEST(PlacementSequence, Modified) {
  EXPECT_EQ(placement_sequence(CoherencyState::Modified), (PlacementTrace{{Actor::Owner, LineAction::Write, 0}}));
}

TEST(PlacementSequence, Exclusive) {
  EXPECT_EQ(placement_sequence(CoherencyState::Exclusive),
            (PlacementTrace{{Actor::Owner, LineAction::Evict, 0},
                            {Actor::Reader, LineAction::Evict, 0},
                            {Actor::Owner, LineAction::Read, 1}}));
}

TEST(PlacementSequence, Shared) {
  EXPECT_EQ(placement_sequence(CoherencyState::Shared),
            (PlacementTrace{{Actor::Owner, LineAction::Read, 0},
                            {Actor::Reader, LineAction::Read, 1},
                            {Actor::Reader, LineAction::Evict, 2}}));
}

TEST(RemoteLatency, EveryPassIsPrecededByAFreshPlacement) {
  for (CoherencyState state : {CoherencyState::Modified, CoherencyState::Exclusive, CoherencyState::Shared}) {
    RecordingBackend backend;
    RunProtocol p;
    p.warm_passes = 2;
    p.repetitions = 3;
    const auto r = remote_latency(CoherencyRun{0, 4, state, 16u << 10, false}, p, backend);
    EXPECT_EQ(r.trace, placement_sequence(state));
    std::vector<std::string> expected;
    const auto one = describe(placement_sequence(state));
    for (int pass = 0; pass < 5; ++pass) {
      expected.insert(expected.end(), one.begin(), one.end());
      expected.push_back("chase");
    }
    EXPECT_EQ(backend.log, expected) << to_string(state);
  }
}

TEST(RemoteLatency, RecoversConfiguredTransferCost) {
  SyntheticBackend backend;
  std::vector<double> per_state;
  for (CoherencyState state : {CoherencyState::Modified, CoherencyState::Exclusive, CoherencyState::Shared}) {
    const double c = remote_latency(CoherencyRun{0, 4, state, 16u << 10, false}, few(), backend).cycles_per_line;
    EXPECT_NEAR(c, 250.0, 250.0 * 0.02) << to_string(state);
    per_state.push_back(c);
  }
  const auto [lo, hi] = std::minmax_element(per_state.begin(), per_state.end());
  EXPECT_LE(*hi / *lo, 1.05);
}

TEST(RemoteLatency, LocalBaselineSeesTheCacheHit) {
  SyntheticBackend backend;
  const auto r = remote_latency(CoherencyRun{3, 3, CoherencyState::Modified, 32u << 10, true}, few(), backend);
  EXPECT_NEAR(r.cycles_per_line, 3.0, 0.01);
}

TEST(RemoteLatency, RunValidation) {
  EXPECT_THROW((CoherencyRun{0, 0, CoherencyState::Modified, 4096, false}.validate()), Error);
  EXPECT_THROW((CoherencyRun{0, 1, CoherencyState::Modified, 4096, true}.validate()), Error);
  EXPECT_THROW((CoherencyRun{0, 1, CoherencyState::Modified, 100, false}.validate()), Error);
  EXPECT_THROW((CoherencyRun{0, 1, CoherencyState::Modified, 256u << 10, false}.validate()), Error);
  SyntheticBackend backend;
  EXPECT_THROW(remote_latency(CoherencyRun{0, 999, CoherencyState::Modified, 4096, false}, few(), backend), Error);
}

TEST(CoreOffsets, DefaultsAndLabels) {
  EXPECT_EQ(core_offsets_for(60), default_core_offsets());
  EXPECT_EQ(core_offsets_for(2), (std::vector<int>{1}));
  EXPECT_EQ(core_offsets_for(4), (std::vector<int>{1, 2}));
  EXPECT_TRUE(core_offsets_for(1).empty());
  EXPECT_EQ(offset_label(4), "D+4");
  EXPECT_EQ(offset_label(-16), "D-16");
}

TEST(CoherencyMatrixRun, ReaderFixedOwnerMoves) {
  SyntheticBackend backend;
  const std::vector<std::uint64_t> ws{1u << 10, 16u << 10};
  const auto m = remote_latency_matrix({1, -2}, {CoherencyState::Modified, CoherencyState::Shared}, ws, few(), backend);
  ASSERT_EQ(m.cells.size(), 4u);
  EXPECT_EQ(m.cells[0].owner_cpu, 4);
  EXPECT_EQ(m.cells[2].owner_cpu, 58 * 4);
  for (const auto& c : m.cells) {
    EXPECT_EQ(c.reader_cpu, 0);
    ASSERT_EQ(c.per_working_set.size(), 2u);
    EXPECT_NEAR(c.cycles, 250.0, 5.0);
  }
  EXPECT_NEAR(m.overall(), 250.0, 5.0);
  EXPECT_THROW(remote_latency_matrix({60}, {CoherencyState::Modified}, ws, few(), backend), Error);
  EXPECT_THROW(remote_latency_matrix({1}, {CoherencyState::Modified}, {}, few(), backend), Error);
}

TEST(CoherencyMatrixRun, SingleCoreIsRejected) {
  SyntheticHierarchy one;
  one.cores = 1;
  SyntheticBackend backend(one);
  EXPECT_THROW(remote_latency_matrix({1}, {CoherencyState::Modified}, {4096}, few(), backend), Error);
}
