#pragma once

#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "archprobe/analysis.hpp"
#include "archprobe/error.hpp"
#include "archprobe/timekit.hpp"
#include "archprobe/topo.hpp"

namespace archprobe {

using json = nlohmann::ordered_json;

inline constexpr const char* kSchemaVersion = "archprobe-report/1";

struct Environment {
  std::string timestamp;
  std::string backend;
  TimerCalibration calibration;
  std::string topology_digest;
  std::size_t cores = 0;
  std::size_t cpus = 0;
  std::size_t smt = 0;
  std::uint64_t seed = 0;
  RunProtocol protocol;

  bool operator==(const Environment&) const = default;
};

/// One benchmark's output as a flat table plus the parameters that produced
/// it. Failed records keep their parameters and carry the error text.
struct ResultRecord {
  std::string kind;
  std::string name;
  json params = json::object();
  std::vector<std::string> columns;
  json rows = json::array();
  bool failed = false;
  std::string error;

  bool operator==(const ResultRecord&) const = default;
};

struct Report {
  std::string schema_version = kSchemaVersion;
  Environment environment;
  std::vector<ResultRecord> results;
  std::optional<MachineModel> model;
  std::optional<std::vector<DatasheetClaim>> comparison;

  bool operator==(const Report&) const = default;
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// FNV-1a over the topology description, as 16 hex digits.
inline std::string topology_digest(const CpuTopology& topo) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : topo.describe()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace detail {

inline json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline std::optional<double> read_optional(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace detail

inline json to_json(const TimerCalibration& c) {
  return json{{"overhead_ns", c.overhead_ns},
              {"resolution_ns", c.resolution_ns},
              {"cycles_per_ns", c.cycles_per_ns},
              {"frequency_unstable", c.frequency_unstable}};
}

inline json to_json(const RunProtocol& p) {
  return json{{"warm_passes", p.warm_passes},
              {"repetitions", p.repetitions},
              {"aggregator", "median"},
              {"flush_between", p.flush_between}};
}

inline json to_json(const MachineModel& m) {
  json levels = json::array();
  for (const auto& l : m.cache_levels) {
    levels.push_back(
        json{{"capacity_bytes", l.capacity_bytes}, {"latency_cycles", l.latency_cycles}, {"latency_ns", l.latency_ns}});
  }
  return json{{"core_count", m.core_count},
              {"smt_per_core", m.smt_per_core},
              {"vector_lanes_dp", m.vector_lanes_dp},
              {"cache_levels", levels},
              {"line_size_bytes", m.line_size_bytes},
              {"dram_latency_cycles", detail::optional_number(m.dram_latency_cycles)},
              {"read_peak_gbps", m.read_peak_gbps},
              {"write_peak_gbps", detail::optional_number(m.write_peak_gbps)},
              {"per_thread_stream_gbps", m.per_thread_stream_gbps},
              {"remote_latency_cycles", detail::optional_number(m.remote_latency_cycles)},
              {"peak_gflops", detail::optional_number(m.peak_gflops)},
              {"hierarchy_warning", m.hierarchy_warning}};
}

inline json to_json(const DatasheetClaim& c) {
  return json{{"metric", c.metric},
              {"documented", detail::optional_number(c.documented)},
              {"measured", detail::optional_number(c.measured)},
              {"verdict", std::string(to_string(c.verdict))}};
}

inline json to_json(const ResultRecord& r) {
  return json{{"kind", r.kind},   {"name", r.name},     {"params", r.params},
              {"failed", r.failed}, {"error", r.failed ? json(r.error) : json(nullptr)},
              {"columns", r.columns}, {"rows", r.rows}};
}

inline json to_json(const Report& r) {
  const auto& e = r.environment;
  json results = json::array();
  for (const auto& rec : r.results) results.push_back(to_json(rec));
  json comparison = nullptr;
  if (r.comparison) {
    comparison = json::array();
    for (const auto& c : *r.comparison) comparison.push_back(to_json(c));
  }
  return json{{"schema_version", r.schema_version},
              {"environment",
               {{"timestamp", e.timestamp},
                {"backend", e.backend},
                {"calibration", to_json(e.calibration)},
                {"topology", {{"digest", e.topology_digest}, {"cores", e.cores}, {"cpus", e.cpus}, {"smt", e.smt}}},
                {"seed", e.seed},
                {"protocol", to_json(e.protocol)}}},
              {"results", results},
              {"model", r.model ? to_json(*r.model) : json(nullptr)},
              {"comparison", comparison}};
}

inline MachineModel model_from_json(const json& j) {
  MachineModel m;
  m.core_count = j.at("core_count").get<int>();
  m.smt_per_core = j.at("smt_per_core").get<int>();
  m.vector_lanes_dp = j.at("vector_lanes_dp").get<int>();
  for (const auto& l : j.at("cache_levels")) {
    m.cache_levels.push_back({l.at("capacity_bytes").get<std::uint64_t>(), l.at("latency_cycles").get<double>(),
                              l.at("latency_ns").get<double>()});
  }
  m.line_size_bytes = j.at("line_size_bytes").get<std::uint64_t>();
  m.dram_latency_cycles = detail::read_optional(j, "dram_latency_cycles");
  m.read_peak_gbps = j.at("read_peak_gbps").get<double>();
  m.write_peak_gbps = detail::read_optional(j, "write_peak_gbps");
  m.per_thread_stream_gbps = j.at("per_thread_stream_gbps").get<double>();
  m.remote_latency_cycles = detail::read_optional(j, "remote_latency_cycles");
  m.peak_gflops = detail::read_optional(j, "peak_gflops");
  m.hierarchy_warning = j.at("hierarchy_warning").get<bool>();
  return m;
}

/// Inverse of to_json(Report). Throws ParseError on schema violations.
inline Report report_from_json(const json& j) {
  try {
    Report r;
    r.schema_version = j.at("schema_version").get<std::string>();
    if (r.schema_version != kSchemaVersion) {
      throw Error(ErrorCode::Parse, "unsupported report schema '" + r.schema_version + "' (expected " +
                                        kSchemaVersion + ")");
    }
    const json& e = j.at("environment");
    r.environment.timestamp = e.at("timestamp").get<std::string>();
    r.environment.backend = e.at("backend").get<std::string>();
    const json& c = e.at("calibration");
    r.environment.calibration = {c.at("overhead_ns").get<double>(), c.at("resolution_ns").get<double>(),
                                 c.at("cycles_per_ns").get<double>(), c.at("frequency_unstable").get<bool>()};
    const json& t = e.at("topology");
    r.environment.topology_digest = t.at("digest").get<std::string>();
    r.environment.cores = t.at("cores").get<std::size_t>();
    r.environment.cpus = t.at("cpus").get<std::size_t>();
    r.environment.smt = t.at("smt").get<std::size_t>();
    r.environment.seed = e.at("seed").get<std::uint64_t>();
    const json& p = e.at("protocol");
    r.environment.protocol.warm_passes = p.at("warm_passes").get<int>();
    r.environment.protocol.repetitions = p.at("repetitions").get<int>();
    r.environment.protocol.flush_between = p.at("flush_between").get<bool>();
    for (const auto& rec : j.at("results")) {
      ResultRecord out;
      out.kind = rec.at("kind").get<std::string>();
      out.name = rec.at("name").get<std::string>();
      out.params = rec.at("params");
      out.failed = rec.at("failed").get<bool>();
      if (out.failed) out.error = rec.at("error").get<std::string>();
      out.columns = rec.at("columns").get<std::vector<std::string>>();
      out.rows = rec.at("rows");
      r.results.push_back(std::move(out));
    }
    if (!j.at("model").is_null()) r.model = model_from_json(j.at("model"));
    if (!j.at("comparison").is_null()) {
      std::vector<DatasheetClaim> claims;
      for (const auto& cl : j.at("comparison")) {
        claims.push_back({cl.at("metric").get<std::string>(), detail::read_optional(cl, "documented"),
                          detail::read_optional(cl, "measured"),
                          parse_verdict(cl.at("verdict").get<std::string>())});
      }
      r.comparison = std::move(claims);
    }
    return r;
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::Parse, std::string("malformed report: ") + ex.what());
  }
}

inline Report load_report(const std::filesystem::path& path) {
  try {
    return report_from_json(json::parse(read_text_file(path)));
  } catch (const json::parse_error& ex) {
    throw Error(ErrorCode::Parse, path.string() + ": " + ex.what());
  }
}

inline std::string dump_report(const Report& r) { return to_json(r).dump(2) + "\n"; }

namespace detail {

/// Writes through a temporary file and a rename so readers never observe a
/// half-written file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error(ErrorCode::Io, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot rename " + tmp.string() + ": " + ec.message());
}

inline std::string csv_cell(const json& v) {
  if (v.is_null()) return "";
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  }
  return v.dump();
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string("N/A"); }

inline std::string file_safe(std::string s) {
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
  }
  return s;
}

}  // namespace detail

inline std::string record_to_csv(const ResultRecord& r) {
  std::string out;
  for (std::size_t i = 0; i < r.columns.size(); ++i) out += (i ? "," : "") + r.columns[i];
  out += "\n";
  for (const auto& row : r.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + detail::csv_cell(row[i]);
    out += "\n";
  }
  return out;
}

inline std::string report_to_markdown(const Report& r) {
  using detail::fmt;
  const auto& e = r.environment;
  std::string md = "# archprobe report\n\n";
  md += "- schema: `" + r.schema_version + "`\n";
  md += "- timestamp: " + e.timestamp + "\n";
  md += "- backend: `" + e.backend + "`\n";
  md += "- topology: " + std::to_string(e.cores) + " cores, " + std::to_string(e.cpus) + " cpus (digest `" +
        e.topology_digest + "`)\n";
  md += "- seed: " + std::to_string(e.seed) + "\n";
  md += "- timer: overhead " + fmt(e.calibration.overhead_ns) + " ns, resolution " +
        fmt(e.calibration.resolution_ns) + " ns, " + fmt(e.calibration.cycles_per_ns) + " cycles/ns" +
        (e.calibration.frequency_unstable ? " (frequency unstable)" : "") + "\n";
  md += "- protocol: " + std::to_string(e.protocol.warm_passes) + " warm passes, " +
        std::to_string(e.protocol.repetitions) + " timed repetitions, median\n\n";

  md += "## Results\n\n| # | Kind | Name | Status | Rows |\n|---|---|---|---|---|\n";
  for (std::size_t i = 0; i < r.results.size(); ++i) {
    const auto& rec = r.results[i];
    md += "| " + std::to_string(i + 1) + " | " + rec.kind + " | " + rec.name + " | " +
          (rec.failed ? "failed: " + rec.error : std::string("ok")) + " | " + std::to_string(rec.rows.size()) + " |\n";
  }

  if (r.model) {
    const auto& m = *r.model;
    md += "\n## Machine model\n\n| Quantity | Value |\n|---|---|\n";
    md += "| Cores | " + std::to_string(m.core_count) + " |\n";
    md += "| Threads per core | " + std::to_string(m.smt_per_core) + " |\n";
    md += "| DP vector lanes | " + std::to_string(m.vector_lanes_dp) + " |\n";
    for (std::size_t i = 0; i < m.cache_levels.size(); ++i) {
      const auto& l = m.cache_levels[i];
      md += "| L" + std::to_string(i + 1) + " | " + std::to_string(l.capacity_bytes / 1024) + " KiB, " +
            fmt(l.latency_cycles) + " cycles (" + fmt(l.latency_ns) + " ns) |\n";
    }
    md += "| Line size | " + std::to_string(m.line_size_bytes) + " B |\n";
    md += "| Memory latency | " + fmt(m.dram_latency_cycles) + " cycles |\n";
    md += "| Read peak | " + fmt(m.read_peak_gbps) + " GB/s |\n";
    md += "| Write peak | " + fmt(m.write_peak_gbps) + " GB/s |\n";
    md += "| Single-thread stream | " + fmt(m.per_thread_stream_gbps) + " GB/s |\n";
    md += "| Remote line latency | " + fmt(m.remote_latency_cycles) + " cycles |\n";
    md += "| Peak arithmetic | " + fmt(m.peak_gflops) + " GFlops |\n";
    if (m.hierarchy_warning) md += "\nNo capacity knee was found; the cache hierarchy is a placeholder.\n";
  }

  if (r.comparison) {
    md += "\n## Datasheet comparison\n\n| Metric | Documented | Measured | Verdict |\n|---|---|---|---|\n";
    for (const auto& c : *r.comparison) {
      md += "| " + c.metric + " | " + fmt(c.documented) + " | " + fmt(c.measured) + " | " +
            std::string(to_string(c.verdict)) + " |\n";
    }
  }
  return md;
}

inline std::set<std::string> parse_formats(const std::string& list) {
  std::set<std::string> out;
  std::size_t start = 0;
  while (start <= list.size()) {
    const auto comma = list.find(',', start);
    const std::string item = detail::trim(list.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (!item.empty()) {
      if (item != "json" && item != "csv" && item != "markdown") {
        throw Error(ErrorCode::InvalidArgument, "unknown format '" + item + "' (json, csv, markdown)");
      }
      out.insert(item);
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (out.empty()) throw Error(ErrorCode::InvalidArgument, "no output format selected");
  return out;
}

/// Writes report.json, one NN_kind_name.csv per record and report.md into
/// `dir` as requested; returns the written paths.
inline std::vector<std::filesystem::path> emit_report(const Report& r, const std::set<std::string>& formats,
                                                      const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> written;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw Error(ErrorCode::Io, "cannot create output directory " + dir.string());
  }
  if (formats.count("json")) {
    written.push_back(dir / "report.json");
    detail::write_file_atomic(written.back(), dump_report(r));
  }
  if (formats.count("csv")) {
    for (std::size_t i = 0; i < r.results.size(); ++i) {
      char idx[8];
      std::snprintf(idx, sizeof idx, "%02zu", i + 1);
      const auto& rec = r.results[i];
      written.push_back(dir / (std::string(idx) + "_" + detail::file_safe(rec.kind + "_" + rec.name) + ".csv"));
      detail::write_file_atomic(written.back(), record_to_csv(rec));
    }
  }
  if (formats.count("markdown")) {
    written.push_back(dir / "report.md");
    detail::write_file_atomic(written.back(), report_to_markdown(r));
  }
  return written;
}

}  // namespace archprobe
