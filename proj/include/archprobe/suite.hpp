#pragma once

// Suite runner: validates a whole plan up front, runs each benchmark into a
// result record, rewrites report.json after every benchmark, and finishes
// with the machine model and an optional datasheet comparison.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "archprobe/analysis.hpp"
#include "archprobe/coherency.hpp"
#include "archprobe/kernels.hpp"
#include "archprobe/live_backend.hpp"
#include "archprobe/report.hpp"
#include "archprobe/synthetic_backend.hpp"

namespace archprobe {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 2;
inline constexpr int kExitFailed = 3;

struct BenchmarkSpec {
  std::string kind;
  json params = json::object();
};

struct SuitePlan {
  std::vector<BenchmarkSpec> benchmarks;
  /// live | synthetic | synthetic:<model file>
  std::string backend = "synthetic";
  RunProtocol protocol;
  std::filesystem::path output_dir = "archprobe-out";
  std::uint64_t seed = 1;
  /// Synthetic-backend noise amplitude; 0 is exact.
  double noise = 0.0;
  std::optional<std::filesystem::path> datasheet;
  double tolerance_pct = kDatasheetTolerancePct;
  /// report.json is always written; csv and markdown are extra.
  std::set<std::string> formats{"json"};
  /// Fixed timestamp for reproducible reports; empty means now.
  std::string timestamp;
};

struct SuiteHooks {
  /// Called after each benchmark's record has been flushed to disk.
  std::function<void(std::size_t completed, const Report&)> after_benchmark;
};

struct SuiteOutcome {
  int exit_code = kExitOk;
  Report report;
  std::vector<std::string> errors;
};

/// Everything normalization needs to know about where the suite will run.
struct SuiteContext {
  const CpuTopology& topology;
  bool live = false;
  std::uint64_t seed = 1;
  int lanes_dp = 8;
};

inline std::unique_ptr<Backend> make_backend(const std::string& spec, std::uint64_t seed = 1, double noise = 0.0) {
  if (spec == "live") return std::make_unique<LiveBackend>();
  if (spec == "synthetic" || spec.rfind("synthetic:", 0) == 0) {
    SyntheticHierarchy model;
    if (spec.size() > 10) model = load_model(spec.substr(10));
    return std::make_unique<SyntheticBackend>(std::move(model), SyntheticOptions{10.0, noise, seed});
  }
  throw Error(ErrorCode::InvalidArgument, "unknown backend '" + spec + "' (live, synthetic[:model])");
}

/// Default lane count for arithmetic kernels on `backend`.
inline int default_lanes(Backend& backend) {
  if (auto* s = dynamic_cast<SyntheticBackend*>(&backend)) return s->model().lanes_dp;
  return live::native_vector_bytes() / 8;
}

/// ARCHPROBE_OUT beats --out beats ./archprobe-out.
inline std::filesystem::path resolve_output_dir(const std::optional<std::filesystem::path>& cli) {
  if (const char* env = std::getenv("ARCHPROBE_OUT"); env && *env) return env;
  if (cli && !cli->empty()) return *cli;
  return "archprobe-out";
}

/// SOURCE_DATE_EPOCH pins the report timestamp when set.
inline std::string report_timestamp() {
  if (const char* env = std::getenv("SOURCE_DATE_EPOCH"); env && *env) {
    char* end = nullptr;
    const long long secs = std::strtoll(env, &end, 10);
    if (end && *end == '\0' && secs >= 0) {
      const std::time_t t = static_cast<std::time_t>(secs);
      std::tm tm{};
      gmtime_r(&t, &tm);
      char buf[32];
      std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
      return buf;
    }
  }
  return utc_timestamp();
}

namespace params {

inline void check_keys(const json& p, std::initializer_list<const char*> allowed) {
  if (!p.is_object()) throw Error(ErrorCode::InvalidArgument, "benchmark parameters must be an object");
  for (const auto& [key, value] : p.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      std::string list;
      for (const char* a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
      throw Error(ErrorCode::InvalidArgument, "unknown parameter '" + key + "' (accepted: " + list + ")");
    }
  }
}

inline std::uint64_t u64(const json& p, const char* key, std::uint64_t fallback) {
  if (!p.contains(key)) return fallback;
  const json& v = p.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw Error(ErrorCode::InvalidArgument, std::string("'") + key + "' must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

inline std::vector<std::uint64_t> u64_list(const json& p, const char* key, std::vector<std::uint64_t> fallback) {
  if (!p.contains(key)) return fallback;
  const json& v = p.at(key);
  if (!v.is_array() || v.empty()) throw Error(ErrorCode::InvalidArgument, std::string("'") + key + "' must be a non-empty list");
  std::vector<std::uint64_t> out;
  for (const auto& item : v) {
    if (!item.is_number_unsigned() && !(item.is_number_integer() && item.get<std::int64_t>() >= 0)) {
      throw Error(ErrorCode::InvalidArgument, std::string("'") + key + "' entries must be non-negative integers");
    }
    out.push_back(item.get<std::uint64_t>());
  }
  return out;
}

inline std::vector<int> int_list(const json& p, const char* key, std::vector<int> fallback) {
  if (!p.contains(key)) return fallback;
  const json& v = p.at(key);
  if (!v.is_array() || v.empty()) throw Error(ErrorCode::InvalidArgument, std::string("'") + key + "' must be a non-empty list");
  std::vector<int> out;
  for (const auto& item : v) {
    if (!item.is_number_integer()) throw Error(ErrorCode::InvalidArgument, std::string("'") + key + "' entries must be integers");
    out.push_back(item.get<int>());
  }
  return out;
}

inline std::string str(const json& p, const char* key, std::string fallback) {
  if (!p.contains(key)) return fallback;
  if (!p.at(key).is_string()) throw Error(ErrorCode::InvalidArgument, std::string("'") + key + "' must be a string");
  return p.at(key).get<std::string>();
}

inline std::vector<std::string> str_list(const json& p, const char* key, std::vector<std::string> fallback) {
  if (!p.contains(key)) return fallback;
  const json& v = p.at(key);
  if (!v.is_array() || v.empty()) throw Error(ErrorCode::InvalidArgument, std::string("'") + key + "' must be a non-empty list");
  std::vector<std::string> out;
  for (const auto& item : v) {
    if (!item.is_string()) throw Error(ErrorCode::InvalidArgument, std::string("'") + key + "' entries must be strings");
    out.push_back(item.get<std::string>());
  }
  return out;
}

inline bool flag(const json& p, const char* key, bool fallback) {
  if (!p.contains(key)) return fallback;
  if (!p.at(key).is_boolean()) throw Error(ErrorCode::InvalidArgument, std::string("'") + key + "' must be true or false");
  return p.at(key).get<bool>();
}

inline void require_ascending(const std::vector<std::uint64_t>& v, const char* what) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] <= v[i - 1]) throw Error(ErrorCode::InvalidArgument, std::string(what) + " must be strictly increasing");
  }
}

/// A placement string with `random` (no seed) bound to the suite seed.
inline std::string placement_name(const json& p, const SuiteContext& ctx, const char* fallback) {
  std::string name = str(p, "placement", fallback);
  if (name == "random") name = "random:" + std::to_string(ctx.seed);
  parse_placement(name);
  return name;
}

inline void check_threads(const std::vector<std::uint64_t>& threads, const SuiteContext& ctx,
                          const std::string& placement) {
  for (auto t : threads) {
    if (t < 1 || t > ctx.topology.cpu_count()) {
      throw Error(ErrorCode::InvalidArgument, "thread count " + std::to_string(t) + " outside 1.." +
                                                  std::to_string(ctx.topology.cpu_count()));
    }
    assign_threads(ctx.topology, t, parse_placement(placement));
  }
}

}  // namespace params

/// Thread counts 1, 2, 4, ... up to `limit`, plus `limit` itself.
inline std::vector<std::uint64_t> doubling_counts(std::uint64_t limit) {
  std::vector<std::uint64_t> out;
  for (std::uint64_t t = 1; t < limit; t *= 2) out.push_back(t);
  out.push_back(limit);
  return out;
}

/// Live bandwidth arrays: four times the largest cache, within 64..512 MiB.
inline std::uint64_t default_live_buffer_bytes() {
  const std::uint64_t want = 4 * static_cast<std::uint64_t>(largest_cache_bytes());
  return std::clamp<std::uint64_t>(want, 64ull << 20, 512ull << 20);
}

/// Fills in defaults and validates one benchmark's parameters. Throws
/// InvalidArgument for anything that would make the benchmark unrunnable.
inline json normalize_benchmark(const BenchmarkSpec& spec, const SuiteContext& ctx) {
  using namespace params;
  const json& p = spec.params.is_null() ? json::object() : spec.params;
  const auto topo_cpus = static_cast<std::uint64_t>(ctx.topology.cpu_count());
  json out = json::object();

  if (spec.kind == "chase") {
    check_keys(p, {"sizes", "strides", "iters"});
    const auto sizes = u64_list(p, "sizes", default_grid_sizes());
    const auto strides = u64_list(p, "strides", default_grid_strides());
    require_ascending(sizes, "sizes");
    require_ascending(strides, "strides");
    for (auto s : sizes) {
      for (auto t : strides) make_chase_geometry(s, t);
    }
    out["sizes"] = sizes;
    out["strides"] = strides;
    out["iters"] = u64(p, "iters", ctx.live ? 250'000 : kDefaultChaseIters);
    if (out["iters"] == 0) throw Error(ErrorCode::InvalidArgument, "iters must be positive");
  } else if (spec.kind == "inst") {
    check_keys(p, {"chains", "executions"});
    json chains = p.contains("chains") ? p.at("chains") : json::array({json{{"op", "add"}}, json{{"op", "mul"}}, json{{"op", "fma"}}});
    if (!chains.is_array() || chains.empty()) throw Error(ErrorCode::InvalidArgument, "'chains' must be a non-empty list");
    json normalized = json::array();
    for (const auto& c : chains) {
      check_keys(c, {"op", "pair", "lanes", "chain_len", "pair_mode"});
      ChainSpec cs;
      const std::string op = str(c, "op", "add");
      cs.op_kind = parse_op_kind(op);
      if (cs.op_kind == OpKind::Custom) cs.custom_op = op;
      cs.pair_op = str(c, "pair", "");
      cs.lane_width = static_cast<int>(u64(c, "lanes", static_cast<std::uint64_t>(ctx.lanes_dp)));
      cs.chain_len = static_cast<int>(u64(c, "chain_len", 100));
      cs.pair_mode = flag(c, "pair_mode", !cs.pair_op.empty());
      cs.validate();
      normalized.push_back(json{{"op", op},
                                {"pair", cs.pair_op},
                                {"lanes", cs.lane_width},
                                {"chain_len", cs.chain_len},
                                {"pair_mode", cs.pair_mode}});
    }
    out["chains"] = normalized;
    out["executions"] = u64(p, "executions", kDefaultChainExecutions);
    if (out["executions"] == 0) throw Error(ErrorCode::InvalidArgument, "executions must be positive");
  } else if (spec.kind == "throughput") {
    check_keys(p, {"threads", "streams", "mixes", "placement", "iters", "lanes"});
    std::vector<std::uint64_t> per_core_multiples;
    for (std::uint64_t k = 1; k <= ctx.topology.max_smt(); ++k) per_core_multiples.push_back(k * ctx.topology.core_count());
    out["placement"] = placement_name(p, ctx, "scatter");
    const auto threads = u64_list(p, "threads", per_core_multiples);
    check_threads(threads, ctx, out["placement"].get<std::string>());
    out["threads"] = threads;
    const auto streams = int_list(p, "streams", {1, 2});
    for (int s : streams) {
      if (s != 1 && s != 2) throw Error(ErrorCode::InvalidArgument, "streams must be 1 or 2");
    }
    out["streams"] = streams;
    const auto mixes = str_list(p, "mixes", {"mul", "mad"});
    for (const auto& m : mixes) parse_arith_mix(m);
    out["mixes"] = mixes;
    out["iters"] = u64(p, "iters", ctx.live ? 10'000'000 : 1'000'000);
    out["lanes"] = u64(p, "lanes", static_cast<std::uint64_t>(ctx.lanes_dp));
    if (out["iters"] == 0 || out["lanes"] == 0) throw Error(ErrorCode::InvalidArgument, "iters and lanes must be positive");
  } else if (spec.kind == "bw") {
    check_keys(p, {"kernel", "threads", "placement", "buffer_bytes", "shared", "software_prefetch"});
    out["kernel"] = std::string(to_string(parse_bandwidth_kind(str(p, "kernel", "read"))));
    out["placement"] = placement_name(p, ctx, "scatter");
    const auto threads = u64_list(p, "threads", doubling_counts(topo_cpus));
    require_ascending(threads, "thread counts");
    check_threads(threads, ctx, out["placement"].get<std::string>());
    out["threads"] = threads;
    const auto buffer = u64(p, "buffer_bytes", ctx.live ? default_live_buffer_bytes() : 64ull << 20);
    out["shared"] = flag(p, "shared", false);
    if (buffer == 0 || buffer % 8 != 0) throw Error(ErrorCode::InvalidArgument, "buffer_bytes must be a positive multiple of 8");
    if (!out["shared"].get<bool>() && buffer / 8 < threads.back()) {
      throw Error(ErrorCode::InvalidArgument, "buffer has fewer elements than threads");
    }
    out["buffer_bytes"] = buffer;
    out["software_prefetch"] = flag(p, "software_prefetch", true);
  } else if (spec.kind == "striad") {
    check_keys(p, {"total_bytes", "jump", "stanzas"});
    const auto total = u64(p, "total_bytes", kDefaultStriadBytes);
    if (total < 8 || total % 8 != 0) throw Error(ErrorCode::InvalidArgument, "total_bytes must be a positive multiple of 8");
    out["total_bytes"] = total;
    out["jump"] = u64(p, "jump", kDefaultStriadJump);
    const auto stanzas = u64_list(p, "stanzas", powers_of_two(8, 65536));
    for (auto s : stanzas) {
      if (s == 0) throw Error(ErrorCode::InvalidArgument, "stanza lengths must be positive");
    }
    out["stanzas"] = stanzas;
  } else if (spec.kind == "coherency") {
    check_keys(p, {"offsets", "states", "working_sets", "repetitions"});
    const int cores = static_cast<int>(ctx.topology.core_count());
    if (cores < 2) throw Error(ErrorCode::InvalidArgument, "coherency needs at least two cores");
    const auto offsets = int_list(p, "offsets", core_offsets_for(cores));
    for (int o : offsets) {
      if (((o % cores) + cores) % cores == 0) {
        throw Error(ErrorCode::InvalidArgument, "offset " + offset_label(o) + " lands on the reader's core");
      }
    }
    out["offsets"] = offsets;
    const auto states = str_list(p, "states", {"modified", "exclusive", "shared"});
    for (const auto& s : states) parse_coherency_state(s);
    out["states"] = states;
    const auto ws = u64_list(p, "working_sets", default_coherency_working_sets());
    for (auto w : ws) CoherencyRun{0, 1, CoherencyState::Modified, w, false}.validate();
    out["working_sets"] = ws;
    out["repetitions"] = u64(p, "repetitions", static_cast<std::uint64_t>(RunProtocol::transfer().repetitions));
    if (out["repetitions"] == 0) throw Error(ErrorCode::InvalidArgument, "repetitions must be positive");
  } else if (spec.kind == "math") {
    check_keys(p, {"functions", "precisions", "array_len", "reps", "seed"});
    std::vector<std::string> all_fns;
    for (const auto& [fn, name] : kMathFnNames) all_fns.emplace_back(name);
    const auto fns = str_list(p, "functions", all_fns);
    for (const auto& f : fns) parse_math_fn(f);
    out["functions"] = fns;
    const auto precisions = str_list(p, "precisions", {"single", "double"});
    for (const auto& pr : precisions) parse_precision(pr);
    out["precisions"] = precisions;
    out["array_len"] = u64(p, "array_len", kDefaultMathLength);
    out["reps"] = u64(p, "reps", ctx.live ? 10'000 : kDefaultMathReps);
    out["seed"] = u64(p, "seed", ctx.seed);
    if (out["array_len"] == 0 || out["reps"] == 0) throw Error(ErrorCode::InvalidArgument, "array_len and reps must be positive");
  } else {
    throw Error(ErrorCode::InvalidArgument,
                "unknown benchmark kind '" + spec.kind + "' (chase, inst, throughput, bw, striad, coherency, math)");
  }
  return out;
}

/// Record kind and display name for a normalized benchmark.
inline std::pair<std::string, std::string> record_identity(const std::string& kind, const json& p) {
  if (kind == "chase") return {"latency_grid", "chase"};
  if (kind == "inst") return {"chain_table", "inst"};
  if (kind == "throughput") return {"throughput_table", "throughput/" + p.at("placement").get<std::string>()};
  if (kind == "bw") {
    return {"bandwidth_curve", p.at("kernel").get<std::string>() + "/" + p.at("placement").get<std::string>() +
                                   (p.at("shared").get<bool>() ? "/shared" : "")};
  }
  if (kind == "striad") return {"striad_curve", "striad"};
  if (kind == "coherency") return {"coherency_matrix", "coherency"};
  return {"math_table", "math"};
}

/// Runs a normalized benchmark and fills `rec.columns` / `rec.rows`.
inline void run_benchmark(const std::string& kind, const json& p, const RunProtocol& protocol, Backend& backend,
                          ResultRecord& rec) {
  const TimerCalibration& calib = backend.calibration();
  if (kind == "chase") {
    const auto grid = measure_latency_grid(p.at("sizes").get<std::vector<std::uint64_t>>(),
                                           p.at("strides").get<std::vector<std::uint64_t>>(),
                                           p.at("iters").get<std::uint64_t>(), protocol, backend);
    rec.columns = {"size_bytes", "stride_bytes", "latency_ns", "latency_cycles"};
    for (std::size_t i = 0; i < grid.sizes.size(); ++i) {
      for (std::size_t j = 0; j < grid.strides.size(); ++j) {
        const double ns = grid.latency_ns[i][j];
        rec.rows.push_back(json::array({grid.sizes[i], grid.strides[j], ns, calib.to_cycles(ns)}));
      }
    }
  } else if (kind == "inst") {
    rec.columns = {"op", "partner", "lane_width", "chain_len", "pair_mode", "cycles"};
    for (const auto& c : p.at("chains")) {
      ChainSpec cs;
      const auto op = c.at("op").get<std::string>();
      cs.op_kind = parse_op_kind(op);
      if (cs.op_kind == OpKind::Custom) cs.custom_op = op;
      cs.pair_op = c.at("pair").get<std::string>();
      cs.lane_width = c.at("lanes").get<int>();
      cs.chain_len = c.at("chain_len").get<int>();
      cs.pair_mode = c.at("pair_mode").get<bool>();
      const double cycles = instruction_chain_latency(cs, protocol, backend, p.at("executions").get<std::uint64_t>());
      rec.rows.push_back(json::array({op, cs.partner_name(), cs.lane_width, cs.chain_len, cs.pair_mode, cycles}));
    }
  } else if (kind == "throughput") {
    rec.columns = {"threads", "threads_per_core", "streams", "mix", "placement", "gflops"};
    const auto placement = parse_placement(p.at("placement").get<std::string>());
    for (auto threads : p.at("threads").get<std::vector<std::uint64_t>>()) {
      for (int streams : p.at("streams").get<std::vector<int>>()) {
        for (const auto& mix : p.at("mixes").get<std::vector<std::string>>()) {
          const auto r = arithmetic_throughput(threads, streams, parse_arith_mix(mix), placement,
                                               p.at("iters").get<std::uint64_t>(), protocol, backend,
                                               p.at("lanes").get<int>());
          std::vector<std::size_t> per_core(backend.topology().core_count(), 0);
          for (int cpu : r.cpus) ++per_core[static_cast<std::size_t>(backend.topology().core_index_of(cpu))];
          rec.rows.push_back(json::array({threads, *std::max_element(per_core.begin(), per_core.end()), streams, mix,
                                          p.at("placement"), r.gflops}));
        }
      }
    }
  } else if (kind == "bw") {
    rec.columns = {"threads", "placement", "gbps"};
    const auto counts = p.at("threads").get<std::vector<std::size_t>>();
    const auto curve = bandwidth_curve(parse_bandwidth_kind(p.at("kernel").get<std::string>()), counts,
                                       parse_placement(p.at("placement").get<std::string>()),
                                       p.at("buffer_bytes").get<std::uint64_t>(), p.at("shared").get<bool>(),
                                       p.at("software_prefetch").get<bool>(), protocol, backend);
    for (const auto& pt : curve.points) rec.rows.push_back(json::array({pt.threads, to_string(pt.placement), pt.gbps}));
  } else if (kind == "striad") {
    rec.columns = {"stanza_elems", "jump_elems", "gbps"};
    const auto jump = p.at("jump").get<std::uint64_t>();
    for (auto stanza : p.at("stanzas").get<std::vector<std::uint64_t>>()) {
      rec.rows.push_back(
          json::array({stanza, jump, striad(p.at("total_bytes").get<std::uint64_t>(), stanza, jump, protocol, backend)}));
    }
  } else if (kind == "coherency") {
    rec.columns = {"offset", "label", "state", "owner_cpu", "reader_cpu", "working_set_bytes", "cycles"};
    std::vector<CoherencyState> states;
    for (const auto& s : p.at("states").get<std::vector<std::string>>()) states.push_back(parse_coherency_state(s));
    RunProtocol transfer = protocol;
    transfer.repetitions = p.at("repetitions").get<int>();
    const auto m = remote_latency_matrix(p.at("offsets").get<std::vector<int>>(), states,
                                         p.at("working_sets").get<std::vector<std::uint64_t>>(), transfer, backend);
    for (const auto& cell : m.cells) {
      for (std::size_t i = 0; i < m.working_sets.size(); ++i) {
        rec.rows.push_back(json::array({cell.offset, offset_label(cell.offset), to_string(cell.state), cell.owner_cpu,
                                        cell.reader_cpu, m.working_sets[i], cell.per_working_set[i]}));
      }
    }
  } else if (kind == "math") {
    rec.columns = {"function", "single_ns_per_element", "double_ns_per_element", "ratio"};
    const auto precisions = p.at("precisions").get<std::vector<std::string>>();
    for (const auto& fn : p.at("functions").get<std::vector<std::string>>()) {
      std::optional<double> single, dbl;
      for (const auto& pr : precisions) {
        const double ns = math_function_bench(parse_math_fn(fn), parse_precision(pr), protocol, backend,
                                              p.at("array_len").get<std::size_t>(), p.at("reps").get<std::uint64_t>(),
                                              p.at("seed").get<std::uint64_t>())
                              .ns_per_element;
        (pr == "single" ? single : dbl) = ns;
      }
      rec.rows.push_back(json::array({fn, detail::optional_number(single), detail::optional_number(dbl),
                                      single && dbl ? json(*dbl / *single) : json(nullptr)}));
    }
  }
}

/// Pulls the model inputs back out of result records.
inline MeasurementSet measurements_from_records(const std::vector<ResultRecord>& results, int default_lanes = 8) {
  MeasurementSet in;
  in.vector_lanes_dp = default_lanes;
  std::vector<double> remote;
  bool lanes_set = false;
  for (const auto& rec : results) {
    if (rec.failed) continue;
    if (rec.kind == "latency_grid" && !in.latency_grid) {
      LatencyGrid g;
      g.sizes = rec.params.at("sizes").get<std::vector<std::uint64_t>>();
      g.strides = rec.params.at("strides").get<std::vector<std::uint64_t>>();
      g.latency_ns.assign(g.sizes.size(), std::vector<double>(g.strides.size(), 0.0));
      for (const auto& row : rec.rows) {
        const auto si = std::find(g.sizes.begin(), g.sizes.end(), row[0].get<std::uint64_t>()) - g.sizes.begin();
        const auto ti = std::find(g.strides.begin(), g.strides.end(), row[1].get<std::uint64_t>()) - g.strides.begin();
        g.latency_ns.at(static_cast<std::size_t>(si)).at(static_cast<std::size_t>(ti)) = row[2].get<double>();
      }
      g.validate();
      in.latency_grid = std::move(g);
    } else if (rec.kind == "bandwidth_curve") {
      BandwidthCurve c;
      c.kind = parse_bandwidth_kind(rec.params.at("kernel").get<std::string>());
      c.shared = rec.params.at("shared").get<bool>();
      c.software_prefetch = rec.params.at("software_prefetch").get<bool>();
      c.buffer_bytes = rec.params.at("buffer_bytes").get<std::uint64_t>();
      for (const auto& row : rec.rows) {
        c.points.push_back({row[0].get<std::size_t>(), parse_placement(row[1].get<std::string>()), row[2].get<double>()});
      }
      in.bandwidth_curves.push_back(std::move(c));
    } else if (rec.kind == "coherency_matrix") {
      for (const auto& row : rec.rows) remote.push_back(row[6].get<double>());
    } else if (rec.kind == "throughput_table") {
      for (const auto& row : rec.rows) in.peak_gflops = std::max(in.peak_gflops.value_or(0.0), row[5].get<double>());
      if (!lanes_set) {
        in.vector_lanes_dp = rec.params.at("lanes").get<int>();
        lanes_set = true;
      }
    }
  }
  if (!remote.empty()) in.remote_latency_cycles = median(remote);
  return in;
}

/// Rebuilds the model (and the comparison, given a datasheet) from the
/// report's own records. A report lacking model inputs keeps no model.
inline void finalize_report(Report& report, const std::optional<std::vector<DatasheetEntry>>& datasheet,
                            double tolerance_pct, int default_lanes = 8) {
  const auto& env = report.environment;
  const auto topo = CpuTopology::uniform(static_cast<int>(env.cores), static_cast<int>(std::max<std::size_t>(env.smt, 1)));
  report.model.reset();
  report.comparison.reset();
  try {
    report.model = build_machine_model(measurements_from_records(report.results, default_lanes), topo, env.calibration);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::MissingInput) throw;
  }
  if (report.model && datasheet) report.comparison = compare_datasheet(*report.model, *datasheet, tolerance_pct);
}

/// The full default suite for `topology`. Coherency is left out on machines
/// with a single core.
inline std::vector<BenchmarkSpec> default_suite(const CpuTopology& topology, bool live) {
  std::vector<BenchmarkSpec> out;
  out.push_back({"chase", json::object()});
  json chains = json::array({json{{"op", "add"}}, json{{"op", "mul"}}, json{{"op", "fma"}}});
  if (live) {
    chains.push_back(json{{"op", "div"}});
  } else {
    chains.push_back(json{{"op", "cvtpd2ps"}, {"pair", "cvtps2pd"}});
  }
  out.push_back({"inst", json{{"chains", chains}}});
  out.push_back({"throughput", json::object()});
  for (BandwidthKind k : kAllBandwidthKinds) out.push_back({"bw", json{{"kernel", to_string(k)}}});
  const auto smt = static_cast<std::uint64_t>(topology.max_smt());
  out.push_back({"bw", json{{"kernel", "read"}, {"placement", "compact"}}});
  out.push_back({"bw", json{{"kernel", "read"}, {"placement", "samecore"}, {"threads", doubling_counts(smt)}}});
  out.push_back({"bw", json{{"kernel", "read"}, {"shared", true}}});
  out.push_back({"striad", json::object()});
  if (topology.core_count() >= 2) out.push_back({"coherency", json::object()});
  out.push_back({"math", json::object()});
  return out;
}

/// Runs `plan` end to end. Returns 2 (nothing run) if any benchmark fails
/// validation, 3 if a benchmark failed at run time, 0 otherwise.
inline SuiteOutcome run_suite(const SuitePlan& plan, Backend& backend, const SuiteHooks& hooks = {}) {
  SuiteOutcome outcome;
  const int lanes = default_lanes(backend);
  const SuiteContext ctx{backend.topology(), dynamic_cast<LiveBackend*>(&backend) != nullptr, plan.seed, lanes};

  std::vector<json> normalized;
  std::optional<std::vector<DatasheetEntry>> datasheet;
  try {
    plan.protocol.validate();
    std::set<std::string> known{"json", "csv", "markdown"};
    for (const auto& f : plan.formats) {
      if (!known.count(f)) throw Error(ErrorCode::InvalidArgument, "unknown format '" + f + "'");
    }
    if (!(plan.tolerance_pct >= 0)) throw Error(ErrorCode::InvalidArgument, "tolerance must be non-negative");
    if (plan.datasheet) datasheet = load_datasheet(*plan.datasheet);
  } catch (const Error& e) {
    outcome.errors.push_back(e.what());
  }
  if (plan.benchmarks.empty()) outcome.errors.push_back("plan has no benchmarks");
  for (std::size_t i = 0; i < plan.benchmarks.size(); ++i) {
    try {
      normalized.push_back(normalize_benchmark(plan.benchmarks[i], ctx));
    } catch (const Error& e) {
      outcome.errors.push_back("benchmark " + std::to_string(i + 1) + " (" + plan.benchmarks[i].kind + "): " + e.what());
    }
  }
  if (!outcome.errors.empty()) {
    outcome.exit_code = kExitInvalid;
    return outcome;
  }

  Report& report = outcome.report;
  auto& env = report.environment;
  env.timestamp = plan.timestamp.empty() ? report_timestamp() : plan.timestamp;
  env.backend = plan.backend;
  env.calibration = backend.calibration();
  env.topology_digest = topology_digest(backend.topology());
  env.cores = backend.topology().core_count();
  env.cpus = backend.topology().cpu_count();
  env.smt = backend.topology().max_smt();
  env.seed = plan.seed;
  env.protocol = plan.protocol;

  const auto json_path = plan.output_dir / "report.json";
  for (std::size_t i = 0; i < plan.benchmarks.size(); ++i) {
    const auto& kind = plan.benchmarks[i].kind;
    ResultRecord rec;
    std::tie(rec.kind, rec.name) = record_identity(kind, normalized[i]);
    rec.params = normalized[i];
    try {
      run_benchmark(kind, normalized[i], plan.protocol, backend, rec);
    } catch (const std::exception& e) {
      rec.failed = true;
      rec.error = e.what();
      rec.rows = json::array();
      outcome.errors.push_back(rec.kind + " " + rec.name + ": " + e.what());
    }
    report.results.push_back(std::move(rec));
    detail::write_file_atomic(json_path, dump_report(report));
    if (hooks.after_benchmark) hooks.after_benchmark(i + 1, report);
  }

  finalize_report(report, datasheet, plan.tolerance_pct, lanes);
  std::set<std::string> formats = plan.formats;
  formats.insert("json");
  emit_report(report, formats, plan.output_dir);
  outcome.exit_code = outcome.errors.empty() ? kExitOk : kExitFailed;
  return outcome;
}

}  // namespace archprobe
