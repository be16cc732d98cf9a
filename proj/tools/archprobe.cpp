// archprobe command-line front end. Every measuring subcommand builds a
// one-benchmark plan and hands it to the suite runner, so validation, report
// files and exit codes behave the same everywhere.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "archprobe/archprobe.hpp"

namespace ap = archprobe;
using ap::json;

namespace {

struct CommonFlags {
  std::string backend = "live";
  std::vector<std::string> threads;
  std::string placement;
  int reps = 10;
  int warm = 2;
  bool flush = false;
  std::string out;
  std::string format = "json";
  std::uint64_t seed = 1;
  double noise = 0.0;
};

void add_common(CLI::App* app, CommonFlags& f, bool threads = false, bool placement = false) {
  app->add_option("--backend", f.backend, "live | synthetic | synthetic:<model file>")->capture_default_str();
  if (threads) app->add_option("--threads", f.threads, "thread count(s), comma separated")->delimiter(',');
  if (placement) app->add_option("--placement", f.placement, "compact | scatter | random[:seed] | samecore | explicit:<ids>");
  app->add_option("--reps", f.reps, "timed repetitions")->capture_default_str()->check(CLI::PositiveNumber);
  app->add_option("--warm", f.warm, "untimed warm passes")->capture_default_str()->check(CLI::NonNegativeNumber);
  app->add_flag("--flush", f.flush, "flush caches between passes");
  app->add_option("--out", f.out, "output directory (ARCHPROBE_OUT takes precedence)");
  app->add_option("--format", f.format, "json,csv,markdown")->capture_default_str();
  app->add_option("--seed", f.seed, "seed for random placement, inputs and synthetic noise")->capture_default_str();
  app->add_option("--noise", f.noise, "synthetic backend noise amplitude")->capture_default_str();
}

/// Sizes accept K/M/G suffixes.
json byte_list(const std::vector<std::string>& items) {
  json out = json::array();
  for (const auto& s : items) out.push_back(ap::parse_byte_size(s));
  return out;
}

json u64_list(const std::vector<std::string>& items) {
  json out = json::array();
  for (const auto& s : items) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || s.empty() || s[0] == '-') {
      throw ap::Error(ap::ErrorCode::InvalidArgument, "'" + s + "' is not a non-negative integer");
    }
    out.push_back(static_cast<std::uint64_t>(v));
  }
  return out;
}

void print_record(const ap::ResultRecord& rec) {
  std::cout << "# " << rec.kind << " " << rec.name;
  if (rec.failed) {
    std::cout << " FAILED: " << rec.error << "\n";
    return;
  }
  std::cout << "\n" << ap::record_to_csv(rec);
}

int finish(const ap::SuiteOutcome& outcome, const ap::SuitePlan& plan, bool print_rows) {
  for (const auto& e : outcome.errors) std::cerr << "archprobe: " << e << "\n";
  if (outcome.exit_code == ap::kExitInvalid) return outcome.exit_code;
  if (print_rows) {
    for (const auto& rec : outcome.report.results) print_record(rec);
  } else {
    for (const auto& rec : outcome.report.results) {
      std::cout << (rec.failed ? "FAILED " : "ok     ") << rec.kind << " " << rec.name << "\n";
    }
  }
  if (outcome.report.comparison) {
    std::cout << "\n";
    for (const auto& c : *outcome.report.comparison) {
      std::cout << c.metric << ": " << ap::to_string(c.verdict) << "\n";
    }
  }
  std::cout << "report: " << (plan.output_dir / "report.json").string() << "\n";
  return outcome.exit_code;
}

ap::SuitePlan base_plan(const CommonFlags& f) {
  ap::SuitePlan plan;
  plan.backend = f.backend;
  plan.protocol.repetitions = f.reps;
  plan.protocol.warm_passes = f.warm;
  plan.protocol.flush_between = f.flush;
  plan.output_dir = ap::resolve_output_dir(f.out.empty() ? std::nullopt : std::optional<std::filesystem::path>(f.out));
  plan.seed = f.seed;
  plan.noise = f.noise;
  for (const auto& fmt : ap::parse_formats(f.format)) plan.formats.insert(fmt);
  return plan;
}

int run_plan(const ap::SuitePlan& plan, bool print_rows) {
  std::unique_ptr<ap::Backend> backend;
  try {
    backend = ap::make_backend(plan.backend, plan.seed, plan.noise);
  } catch (const std::exception& e) {
    std::cerr << "archprobe: " << e.what() << "\n";
    return ap::kExitInvalid;
  }
  return finish(ap::run_suite(plan, *backend), plan, print_rows);
}

/// Plan files: {"backend", "seed", "protocol": {...}, "formats": [...],
/// "datasheet", "tolerance_pct", "benchmarks": [{"kind", "params"}]}.
void apply_plan_file(const std::string& path, ap::SuitePlan& plan, const CLI::App& app) {
  json j;
  try {
    j = json::parse(ap::read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ap::Error(ap::ErrorCode::Parse, path + ": " + e.what());
  }
  try {
    // Explicit command-line flags win over the file.
    auto unset = [&](const char* flag) { return app.count(flag) == 0; };
    if (j.contains("backend") && unset("--backend")) plan.backend = j.at("backend").get<std::string>();
    if (j.contains("seed") && unset("--seed")) plan.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("protocol")) {
      const json& p = j.at("protocol");
      if (p.contains("warm_passes") && unset("--warm")) plan.protocol.warm_passes = p.at("warm_passes").get<int>();
      if (p.contains("repetitions") && unset("--reps")) plan.protocol.repetitions = p.at("repetitions").get<int>();
      if (p.contains("flush_between") && unset("--flush")) plan.protocol.flush_between = p.at("flush_between").get<bool>();
    }
    if (j.contains("formats") && unset("--format")) {
      for (const auto& f : j.at("formats")) plan.formats.insert(f.get<std::string>());
    }
    if (j.contains("datasheet") && unset("--datasheet")) plan.datasheet = j.at("datasheet").get<std::string>();
    if (j.contains("tolerance_pct") && unset("--tolerance")) plan.tolerance_pct = j.at("tolerance_pct").get<double>();
    for (const auto& b : j.at("benchmarks")) {
      plan.benchmarks.push_back({b.at("kind").get<std::string>(), b.value("params", json::object())});
    }
  } catch (const json::exception& e) {
    throw ap::Error(ap::ErrorCode::Parse, path + ": " + e.what());
  }
}

int reemit(const std::string& path, const CommonFlags& f, const std::string& datasheet, double tolerance,
           bool print_comparison) {
  ap::Report report = ap::load_report(path);
  std::optional<std::vector<ap::DatasheetEntry>> sheet;
  if (!datasheet.empty()) sheet = ap::load_datasheet(datasheet);
  if (!report.model || sheet) ap::finalize_report(report, sheet, tolerance);
  if (sheet && !report.model) {
    std::cerr << "archprobe: report lacks the latency grid or read bandwidth curve needed for a model\n";
    return ap::kExitFailed;
  }
  const auto dir = ap::resolve_output_dir(f.out.empty() ? std::nullopt : std::optional<std::filesystem::path>(f.out));
  for (const auto& written : ap::emit_report(report, ap::parse_formats(f.format), dir)) {
    std::cout << "wrote " << written.string() << "\n";
  }
  if (print_comparison && report.comparison) {
    std::cout << "\n| Metric | Documented | Measured | Verdict |\n|---|---|---|---|\n";
    for (const auto& c : *report.comparison) {
      std::cout << "| " << c.metric << " | " << ap::detail::fmt(c.documented) << " | " << ap::detail::fmt(c.measured)
                << " | " << ap::to_string(c.verdict) << " |\n";
    }
  }
  return ap::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"archprobe: processor characterization benchmarks"};
  app.require_subcommand(1);

  // chase
  CommonFlags chase_f;
  std::vector<std::string> sizes, strides;
  std::uint64_t chase_iters = 0;
  auto* chase = app.add_subcommand("chase", "pointer-chasing latency over a size x stride grid");
  add_common(chase, chase_f);
  chase->add_option("--sizes", sizes, "array sizes (e.g. 8K,64K,1M)")->delimiter(',');
  chase->add_option("--strides", strides, "strides in bytes")->delimiter(',');
  chase->add_option("--iters", chase_iters, "dependent loads per pass");

  // inst
  CommonFlags inst_f;
  std::string op = "add", pair;
  int lanes = 0, chain_len = 100;
  std::uint64_t executions = 0;
  auto* inst = app.add_subcommand("inst", "dependent instruction-chain latency");
  add_common(inst, inst_f);
  inst->add_option("--op", op, "operation")->capture_default_str();
  inst->add_option("--pair", pair, "partner operation for pair mode (e.g. cvtps2pd)");
  inst->add_option("--lanes", lanes, "vector lanes");
  inst->add_option("--chain-len", chain_len, "operations per chain")->capture_default_str();
  inst->add_option("--executions", executions, "chains per pass");

  // throughput
  CommonFlags thr_f;
  std::vector<std::string> streams, mixes;
  std::uint64_t thr_iters = 0;
  int thr_lanes = 0;
  auto* thr = app.add_subcommand("throughput", "vector arithmetic throughput");
  add_common(thr, thr_f, true, true);
  thr->add_option("--streams", streams, "independent streams per thread (1,2)")->delimiter(',');
  thr->add_option("--mix", mixes, "mul,mad")->delimiter(',');
  thr->add_option("--iters", thr_iters, "iterations per stream");
  thr->add_option("--lanes", thr_lanes, "vector lanes");

  // bw
  CommonFlags bw_f;
  std::string kernel = "read", buffer;
  bool shared = false, no_prefetch = false;
  auto* bw = app.add_subcommand("bw", "memory bandwidth versus thread count");
  add_common(bw, bw_f, true, true);
  bw->add_option("--kernel", kernel, "read | write | write-streaming | scale1 | scale2 | saxpy1 | saxpy2 | triad")
      ->capture_default_str();
  bw->add_option("--buffer", buffer, "bytes per array (e.g. 256M)");
  bw->add_flag("--shared", shared, "every thread reads the same buffer");
  bw->add_flag("--no-prefetch", no_prefetch, "disable software prefetch");

  // striad
  CommonFlags striad_f;
  std::string total;
  std::uint64_t jump = 0;
  std::vector<std::string> stanzas;
  auto* st = app.add_subcommand("striad", "stanza triad bandwidth versus stanza length");
  add_common(st, striad_f);
  st->add_option("--total", total, "bytes per array");
  st->add_option("--jump", jump, "elements skipped between stanzas");
  st->add_option("--stanzas", stanzas, "stanza lengths in elements")->delimiter(',');

  // coherency
  CommonFlags coh_f;
  std::vector<int> offsets;
  std::vector<std::string> states, working_sets;
  auto* coh = app.add_subcommand("coherency", "remote cache-line latency by coherency state");
  add_common(coh, coh_f);
  coh->add_option("--offsets", offsets, "owner core offsets from core 0 (e.g. 1,2,-2)")->delimiter(',');
  coh->add_option("--states", states, "modified,exclusive,shared")->delimiter(',');
  coh->add_option("--working-sets", working_sets, "working-set sizes (e.g. 1K,16K)")->delimiter(',');

  // math
  CommonFlags math_f;
  std::vector<std::string> functions, precisions;
  std::uint64_t array_len = 0, inner_reps = 0;
  auto* math = app.add_subcommand("math", "single versus double precision math functions");
  add_common(math, math_f);
  math->add_option("--functions", functions, "exp_e,exp_2,log_e,log_2")->delimiter(',');
  math->add_option("--precisions", precisions, "single,double")->delimiter(',');
  math->add_option("--array-len", array_len, "input elements");
  math->add_option("--inner-reps", inner_reps, "sweeps over the input per pass");

  // suite
  CommonFlags suite_f;
  std::string plan_file, suite_sheet;
  double suite_tol = ap::kDatasheetTolerancePct;
  auto* suite = app.add_subcommand("suite", "run a benchmark plan (default: the full suite)");
  add_common(suite, suite_f);
  suite->add_option("--plan", plan_file, "JSON plan file")->check(CLI::ExistingFile);
  suite->add_option("--datasheet", suite_sheet, "documented values to compare against")->check(CLI::ExistingFile);
  suite->add_option("--tolerance", suite_tol, "match tolerance in percent")->capture_default_str();

  // report
  CommonFlags report_f;
  std::string report_path;
  auto* report = app.add_subcommand("report", "re-emit a report.json in other formats");
  report->add_option("report", report_path, "report.json")->required()->check(CLI::ExistingFile);
  report->add_option("--out", report_f.out, "output directory (ARCHPROBE_OUT takes precedence)");
  report->add_option("--format", report_f.format, "json,csv,markdown")->capture_default_str();

  // compare
  CommonFlags cmp_f;
  cmp_f.format = "markdown";
  std::string cmp_path, cmp_sheet;
  double cmp_tol = ap::kDatasheetTolerancePct;
  auto* cmp = app.add_subcommand("compare", "compare a report's machine model with a datasheet");
  cmp->add_option("report", cmp_path, "report.json")->required()->check(CLI::ExistingFile);
  cmp->add_option("--datasheet", cmp_sheet, "datasheet file")->required()->check(CLI::ExistingFile);
  cmp->add_option("--tolerance", cmp_tol, "match tolerance in percent")->capture_default_str();
  cmp->add_option("--out", cmp_f.out, "output directory (ARCHPROBE_OUT takes precedence)");
  cmp->add_option("--format", cmp_f.format, "json,csv,markdown")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : ap::kExitInvalid;
  }

  try {
    auto single = [&](const CommonFlags& f, const std::string& kind, json params) {
      ap::SuitePlan plan = base_plan(f);
      plan.benchmarks.push_back({kind, std::move(params)});
      return run_plan(plan, true);
    };

    if (*chase) {
      json p = json::object();
      if (!sizes.empty()) p["sizes"] = byte_list(sizes);
      if (!strides.empty()) p["strides"] = byte_list(strides);
      if (chase_iters) p["iters"] = chase_iters;
      return single(chase_f, "chase", p);
    }
    if (*inst) {
      json c{{"op", op}, {"chain_len", chain_len}};
      if (!pair.empty()) c["pair"] = pair;
      if (lanes) c["lanes"] = lanes;
      json p{{"chains", json::array({c})}};
      if (executions) p["executions"] = executions;
      return single(inst_f, "inst", p);
    }
    if (*thr) {
      json p = json::object();
      if (!thr_f.threads.empty()) p["threads"] = u64_list(thr_f.threads);
      if (!thr_f.placement.empty()) p["placement"] = thr_f.placement;
      if (!streams.empty()) p["streams"] = u64_list(streams);
      if (!mixes.empty()) p["mixes"] = mixes;
      if (thr_iters) p["iters"] = thr_iters;
      if (thr_lanes) p["lanes"] = thr_lanes;
      return single(thr_f, "throughput", p);
    }
    if (*bw) {
      json p{{"kernel", kernel}, {"shared", shared}, {"software_prefetch", !no_prefetch}};
      if (!bw_f.threads.empty()) p["threads"] = u64_list(bw_f.threads);
      if (!bw_f.placement.empty()) p["placement"] = bw_f.placement;
      if (!buffer.empty()) p["buffer_bytes"] = ap::parse_byte_size(buffer);
      return single(bw_f, "bw", p);
    }
    if (*st) {
      json p = json::object();
      if (!total.empty()) p["total_bytes"] = ap::parse_byte_size(total);
      if (st->count("--jump")) p["jump"] = jump;
      if (!stanzas.empty()) p["stanzas"] = u64_list(stanzas);
      return single(striad_f, "striad", p);
    }
    if (*coh) {
      json p = json::object();
      if (!offsets.empty()) p["offsets"] = offsets;
      if (!states.empty()) p["states"] = states;
      if (!working_sets.empty()) p["working_sets"] = byte_list(working_sets);
      if (coh->count("--reps")) p["repetitions"] = coh_f.reps;
      return single(coh_f, "coherency", p);
    }
    if (*math) {
      json p = json::object();
      if (!functions.empty()) p["functions"] = functions;
      if (!precisions.empty()) p["precisions"] = precisions;
      if (array_len) p["array_len"] = array_len;
      if (inner_reps) p["reps"] = inner_reps;
      return single(math_f, "math", p);
    }
    if (*suite) {
      ap::SuitePlan plan = base_plan(suite_f);
      if (!suite_sheet.empty()) plan.datasheet = suite_sheet;
      plan.tolerance_pct = suite_tol;
      if (!plan_file.empty()) apply_plan_file(plan_file, plan, *suite);
      if (plan.benchmarks.empty()) {
        std::unique_ptr<ap::Backend> backend;
        try {
          backend = ap::make_backend(plan.backend, plan.seed, plan.noise);
        } catch (const std::exception& e) {
          std::cerr << "archprobe: " << e.what() << "\n";
          return ap::kExitInvalid;
        }
        plan.benchmarks = ap::default_suite(backend->topology(), plan.backend == "live");
        return finish(ap::run_suite(plan, *backend), plan, false);
      }
      return run_plan(plan, false);
    }
    if (*report) return reemit(report_path, report_f, "", ap::kDatasheetTolerancePct, false);
    if (*cmp) return reemit(cmp_path, cmp_f, cmp_sheet, cmp_tol, true);
  } catch (const ap::Error& e) {
    std::cerr << "archprobe: " << e.what() << "\n";
    const bool invalid = e.code() == ap::ErrorCode::InvalidArgument || e.code() == ap::ErrorCode::Parse ||
                         e.code() == ap::ErrorCode::MissingInput;
    return invalid ? ap::kExitInvalid : ap::kExitFailed;
  } catch (const std::exception& e) {
    std::cerr << "archprobe: " << e.what() << "\n";
    return ap::kExitFailed;
  }
  return ap::kExitOk;
}
