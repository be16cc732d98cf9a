#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <string>

#include "archprobe/report.hpp"
#include "support.hpp"

using namespace archprobe;
using archprobe::testing::source_path;
using archprobe::testing::TempDir;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
};

CliResult cli(const std::string& args, const TempDir& dir) {
  const auto log = dir.path() / "stdout.txt";
  const std::string cmd = std::string("'") + ARCHPROBE_CLI + "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  r.out.assign(std::istreambuf_iterator<char>(in), {});
  return r;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    unsetenv("ARCHPROBE_OUT");
    setenv("SOURCE_DATE_EPOCH", "0", 1);
  }
  std::string out_flag() const { return "--backend synthetic --out '" + dir.path().string() + "'"; }
  TempDir dir;
};

}  // namespace

TEST_F(Cli, MeasuringSubcommandsRunOnTheSyntheticBackend) {
  const std::vector<std::string> commands{
      "chase --sizes 8K,64K,1M --strides 8,64",
      "inst --op cvtpd2ps --pair cvtps2pd --chain-len 100",
      "throughput --threads 60,240 --mix mad",
      "bw --kernel triad --threads 1,60",
      "striad --stanzas 8,512",
      "coherency --offsets 1,-2 --states modified --working-sets 4K --reps 20",
      "math --functions exp_2 --array-len 256",
  };
  for (const auto& c : commands) {
    const auto r = cli(c + " " + out_flag(), dir);
    EXPECT_EQ(r.code, 0) << c << "\n" << r.out;
    EXPECT_NE(r.out.find("report: "), std::string::npos) << c;
    EXPECT_EQ(load_report(dir.path() / "report.json").results.size(), 1u) << c;
  }
}

TEST_F(Cli, PrintsRowsAsCsv) {
  const auto r = cli("inst --op add " + out_flag(), dir);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("# chain_table inst"), std::string::npos);
  EXPECT_NE(r.out.find("add,"), std::string::npos);
}

TEST_F(Cli, BadArgumentsExitTwo) {
  for (const std::string c : {"", "frobnicate", "chase --sizes 8K --strides 16K", "bw --kernel copy",
                              "bw --threads 0", "throughput --streams 3", "math --functions sin",
                              "chase --backend quantum", "chase --reps 0", "inst --op add --format xml"}) {
    const auto r = cli(c + (c.empty() ? "" : " --out '" + dir.path().string() + "/x'"), dir);
    EXPECT_EQ(r.code, 2) << c << "\n" << r.out;
    EXPECT_FALSE(std::filesystem::exists(dir.path() / "x")) << c;
  }
}

TEST_F(Cli, CapabilityFailureExitsThreeWithAReport) {
  const auto r = cli("inst --op div " + out_flag(), dir);
  EXPECT_EQ(r.code, 3) << r.out;
  EXPECT_NE(r.out.find("FAILED"), std::string::npos);
  EXPECT_TRUE(load_report(dir.path() / "report.json").results[0].failed);
}

TEST_F(Cli, SuiteThenReportThenCompare) {
  const auto plan = dir.path() / "plan.json";
  std::ofstream(plan) << R"({"benchmarks": [
    {"kind": "chase", "params": {"sizes": [8192, 16384, 32768, 65536, 131072, 262144, 524288, 1048576, 2097152]}},
    {"kind": "bw", "params": {"kernel": "read"}},
    {"kind": "bw", "params": {"kernel": "write"}}]})";
  const auto suite = cli("suite --plan '" + plan.string() + "' --format json,csv " + out_flag(), dir);
  ASSERT_EQ(suite.code, 0) << suite.out;
  const Report rep = load_report(dir.path() / "report.json");
  ASSERT_TRUE(rep.model.has_value());
  EXPECT_EQ(rep.model->line_size_bytes, 64u);
  EXPECT_EQ(rep.environment.timestamp, "1970-01-01T00:00:00Z");
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "02_bandwidth_curve_read_scatter.csv"));

  const auto md_dir = dir.path() / "md";
  const auto again = cli("report '" + (dir.path() / "report.json").string() + "' --format markdown --out '" +
                             md_dir.string() + "'",
                         dir);
  ASSERT_EQ(again.code, 0) << again.out;
  EXPECT_TRUE(std::filesystem::exists(md_dir / "report.md"));

  const auto cmp = cli("compare '" + (dir.path() / "report.json").string() + "' --datasheet '" +
                           source_path("configs/xeonphi5110.datasheet").string() + "' --format json,markdown --out '" +
                           (dir.path() / "cmp").string() + "'",
                       dir);
  ASSERT_EQ(cmp.code, 0) << cmp.out;
  EXPECT_NE(cmp.out.find("| l1_latency | 1 | 3 | mismatch |"), std::string::npos) << cmp.out;
  EXPECT_NE(cmp.out.find("| read_bandwidth | 320 | 164 | mismatch |"), std::string::npos) << cmp.out;
  EXPECT_TRUE(load_report(dir.path() / "cmp" / "report.json").comparison.has_value());

  const auto missing = cli("compare '" + (dir.path() / "report.json").string() + "'", dir);
  EXPECT_EQ(missing.code, 2);
}

TEST_F(Cli, EnvironmentOverridesOutFlag) {
  const auto env_dir = dir.path() / "env";
  setenv("ARCHPROBE_OUT", env_dir.c_str(), 1);
  const auto r = cli("striad --stanzas 64 " + out_flag(), dir);
  unsetenv("ARCHPROBE_OUT");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(std::filesystem::exists(env_dir / "report.json"));
  EXPECT_FALSE(std::filesystem::exists(dir.path() / "report.json"));
}

TEST_F(Cli, CustomSyntheticModel) {
  const auto model = dir.path() / "tiny.model";
  std::ofstream(model) << "cores = 4\nsmt = 2\n";
  const auto r = cli("throughput --backend 'synthetic:" + model.string() + "' --threads 8 --out '" +
                         dir.path().string() + "'",
                     dir);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(load_report(dir.path() / "report.json").environment.cpus, 8u);
}
