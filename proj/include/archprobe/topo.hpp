#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <iterator>
#include <cctype>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include <pthread.h>
#include <sched.h>

#include "archprobe/error.hpp"

namespace archprobe {

struct CoreInfo {
  int core_id = 0;
  std::vector<int> hw_threads;  // logical cpu ids, ascending

  bool operator==(const CoreInfo&) const = default;
};

/// Cores ordered by id, each with its online logical cpus.
class CpuTopology {
 public:
  CpuTopology() = default;

  /// Validates and normalizes: cores sorted by id, threads sorted, no
  /// duplicate logical ids, no empty cores.
  explicit CpuTopology(std::vector<CoreInfo> cores) : cores_(std::move(cores)) {
    std::sort(cores_.begin(), cores_.end(),
              [](const CoreInfo& a, const CoreInfo& b) { return a.core_id < b.core_id; });
    std::set<int> seen_cpus;
    std::set<int> seen_cores;
    for (auto& core : cores_) {
      if (core.hw_threads.empty()) {
        throw Error(ErrorCode::InvalidArgument, "core " + std::to_string(core.core_id) + " has no hw threads");
      }
      if (!seen_cores.insert(core.core_id).second) {
        throw Error(ErrorCode::InvalidArgument, "duplicate core id " + std::to_string(core.core_id));
      }
      std::sort(core.hw_threads.begin(), core.hw_threads.end());
      for (int cpu : core.hw_threads) {
        if (!seen_cpus.insert(cpu).second) {
          throw Error(ErrorCode::InvalidArgument, "duplicate logical cpu " + std::to_string(cpu));
        }
      }
    }
  }

  /// `cores` cores with `smt` hw threads each; core c owns cpus
  /// [c*smt, (c+1)*smt).
  static CpuTopology uniform(int cores, int smt) {
    std::vector<CoreInfo> list;
    for (int c = 0; c < cores; ++c) {
      CoreInfo core{c, {}};
      for (int t = 0; t < smt; ++t) core.hw_threads.push_back(c * smt + t);
      list.push_back(std::move(core));
    }
    return CpuTopology(std::move(list));
  }

  const std::vector<CoreInfo>& cores() const { return cores_; }
  std::size_t core_count() const { return cores_.size(); }

  std::size_t cpu_count() const {
    std::size_t n = 0;
    for (const auto& c : cores_) n += c.hw_threads.size();
    return n;
  }

  std::size_t max_smt() const {
    std::size_t n = 0;
    for (const auto& c : cores_) n = std::max(n, c.hw_threads.size());
    return n;
  }

  bool contains(int cpu) const { return core_index_of(cpu) >= 0; }

  /// Position of the core owning `cpu` in cores(), or -1.
  int core_index_of(int cpu) const {
    for (std::size_t i = 0; i < cores_.size(); ++i) {
      const auto& t = cores_[i].hw_threads;
      if (std::find(t.begin(), t.end(), cpu) != t.end()) return static_cast<int>(i);
    }
    return -1;
  }

  /// Stable one-line text form, used for report digests.
  std::string describe() const {
    std::ostringstream os;
    for (const auto& c : cores_) {
      os << c.core_id << ':';
      for (std::size_t i = 0; i < c.hw_threads.size(); ++i) os << (i ? "," : "") << c.hw_threads[i];
      os << ';';
    }
    return os.str();
  }

  bool operator==(const CpuTopology&) const = default;

 private:
  std::vector<CoreInfo> cores_;
};

/// Parses the fixture format: one line per logical cpu,
/// `<logical_id> <core_id> [offline]`. Blank lines and `#` comments are
/// ignored. Offline cpus are dropped.
inline CpuTopology parse_topology_fixture(std::string_view text) {
  std::map<int, CoreInfo> cores;
  std::set<int> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::vector<std::string> tokens;
    for (std::string tok; fields >> tok;) tokens.push_back(tok);
    if (tokens.empty()) continue;
    if (tokens.size() < 2 || tokens.size() > 3) {
      throw ParseError(lineno, "expected '<logical_id> <core_id> [offline]', got '" + line + "'");
    }
    auto parse_id = [&](const std::string& tok) {
      int value = -1;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
      if (ec != std::errc() || ptr != tok.data() + tok.size() || value < 0) {
        throw ParseError(lineno, "bad id '" + tok + "'");
      }
      return value;
    };
    const int cpu = parse_id(tokens[0]);
    const int core = parse_id(tokens[1]);
    bool offline = false;
    if (tokens.size() == 3) {
      if (tokens[2] != "offline") throw ParseError(lineno, "unknown flag '" + tokens[2] + "'");
      offline = true;
    }
    if (!seen.insert(cpu).second) throw ParseError(lineno, "duplicate logical cpu " + tokens[0]);
    if (offline) continue;
    auto& entry = cores[core];
    entry.core_id = core;
    entry.hw_threads.push_back(cpu);
  }
  std::vector<CoreInfo> list;
  for (auto& [id, core] : cores) list.push_back(std::move(core));
  if (list.empty()) throw ParseError(lineno, "fixture lists no online cpus");
  return CpuTopology(std::move(list));
}

inline CpuTopology load_topology_fixture(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open topology fixture " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_topology_fixture(buf.str());
}

namespace detail {

inline std::set<int> parse_cpu_list(const std::string& text) {
  std::set<int> cpus;
  std::stringstream ss(text);
  std::string range;
  while (std::getline(ss, range, ',')) {
    range.erase(std::remove_if(range.begin(), range.end(), [](unsigned char ch) { return std::isspace(ch) != 0; }), range.end());
    if (range.empty()) continue;
    const auto dash = range.find('-');
    const int lo = std::stoi(range.substr(0, dash));
    const int hi = dash == std::string::npos ? lo : std::stoi(range.substr(dash + 1));
    for (int c = lo; c <= hi; ++c) cpus.insert(c);
  }
  return cpus;
}

inline std::string read_first_line(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::string line;
  if (in) std::getline(in, line);
  return line;
}

}  // namespace detail

/// Enumerates online cpus of the running system from sysfs. Falls back to
/// one core per cpu in the affinity mask when sysfs lacks topology data.
inline CpuTopology discover_live_topology(const std::filesystem::path& sysfs = "/sys/devices/system/cpu") {
  std::set<int> online;
  if (const auto text = detail::read_first_line(sysfs / "online"); !text.empty()) {
    online = detail::parse_cpu_list(text);
  }
  cpu_set_t mask;
  CPU_ZERO(&mask);
  if (sched_getaffinity(0, sizeof(mask), &mask) == 0) {
    std::set<int> allowed;
    for (int c = 0; c < CPU_SETSIZE; ++c) {
      if (CPU_ISSET(c, &mask)) allowed.insert(c);
    }
    if (online.empty()) {
      online = allowed;
    } else {
      std::set<int> both;
      std::set_intersection(online.begin(), online.end(), allowed.begin(), allowed.end(),
                            std::inserter(both, both.end()));
      online = both;
    }
  }
  if (online.empty()) online.insert(0);

  // Cores on different packages may share a core_id; key on both.
  std::map<std::pair<int, int>, std::vector<int>> by_core;
  for (int cpu : online) {
    const auto dir = sysfs / ("cpu" + std::to_string(cpu)) / "topology";
    const auto core_text = detail::read_first_line(dir / "core_id");
    const auto pkg_text = detail::read_first_line(dir / "physical_package_id");
    const int core = core_text.empty() ? cpu : std::stoi(core_text);
    const int pkg = pkg_text.empty() ? 0 : std::stoi(pkg_text);
    by_core[{pkg, core}].push_back(cpu);
  }
  std::vector<CoreInfo> list;
  int next_id = 0;
  for (auto& [key, cpus] : by_core) list.push_back(CoreInfo{next_id++, std::move(cpus)});
  return CpuTopology(std::move(list));
}

namespace placement {
struct Compact {
  bool operator==(const Compact&) const = default;
};
struct Scatter {
  bool operator==(const Scatter&) const = default;
};
struct Random {
  std::uint64_t seed = 0;
  bool operator==(const Random&) const = default;
};
struct SameCore {
  bool operator==(const SameCore&) const = default;
};
struct Explicit {
  std::vector<int> cpus;
  bool operator==(const Explicit&) const = default;
};
}  // namespace placement

using PlacementPattern = std::variant<placement::Compact, placement::Scatter, placement::Random,
                                      placement::SameCore, placement::Explicit>;

inline std::string to_string(const PlacementPattern& p) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, placement::Compact>) {
          return "compact";
        } else if constexpr (std::is_same_v<T, placement::Scatter>) {
          return "scatter";
        } else if constexpr (std::is_same_v<T, placement::Random>) {
          return "random:" + std::to_string(v.seed);
        } else if constexpr (std::is_same_v<T, placement::SameCore>) {
          return "samecore";
        } else {
          std::string s = "explicit:";
          for (std::size_t i = 0; i < v.cpus.size(); ++i) s += (i ? "," : "") + std::to_string(v.cpus[i]);
          return s;
        }
      },
      p);
}

/// Inverse of to_string(): compact | scatter | random:<seed> | samecore |
/// explicit:<id,id,...>.
inline PlacementPattern parse_placement(std::string_view text) {
  const std::string s(text);
  if (s == "compact") return placement::Compact{};
  if (s == "scatter") return placement::Scatter{};
  if (s == "samecore") return placement::SameCore{};
  try {
    if (s.rfind("random:", 0) == 0) {
      std::size_t used = 0;
      const auto seed = std::stoull(s.substr(7), &used);
      if (used != s.size() - 7) throw std::invalid_argument(s);
      return placement::Random{seed};
    }
    if (s.rfind("explicit:", 0) == 0) {
      placement::Explicit e;
      std::stringstream ss(s.substr(9));
      for (std::string tok; std::getline(ss, tok, ',');) e.cpus.push_back(std::stoi(tok));
      if (e.cpus.empty()) throw std::invalid_argument(s);
      return e;
    }
  } catch (const std::logic_error&) {
  }
  throw Error(ErrorCode::InvalidArgument, "unknown placement '" + s + "'");
}

namespace detail {

/// Fisher-Yates over a fixed-algorithm engine so a seed means the same
/// order on every standard library.
inline std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

/// Fills threads round by round: the r-th round takes hw thread r of each
/// core in `core_order`, skipping cores that have fewer threads.
inline std::vector<int> round_robin(const CpuTopology& topo, const std::vector<std::size_t>& core_order,
                                    std::size_t n) {
  std::vector<int> out;
  for (std::size_t round = 0; out.size() < n && round < topo.max_smt(); ++round) {
    for (std::size_t idx : core_order) {
      const auto& threads = topo.cores()[idx].hw_threads;
      if (round < threads.size()) out.push_back(threads[round]);
      if (out.size() == n) break;
    }
  }
  return out;
}

}  // namespace detail

/// Maps `n` worker threads to logical cpus according to `pattern`.
inline std::vector<int> assign_threads(const CpuTopology& topo, std::size_t n, const PlacementPattern& pattern) {
  const std::size_t total = topo.cpu_count();
  if (n < 1 || n > total) {
    throw Error(ErrorCode::InvalidArgument,
                "thread count " + std::to_string(n) + " outside [1, " + std::to_string(total) + "]");
  }
  const std::size_t cores = topo.core_count();

  return std::visit(
      [&](const auto& p) -> std::vector<int> {
        using T = std::decay_t<decltype(p)>;
        std::vector<int> out;
        if constexpr (std::is_same_v<T, placement::Compact>) {
          for (const auto& core : topo.cores()) {
            for (int cpu : core.hw_threads) {
              if (out.size() < n) out.push_back(cpu);
            }
          }
        } else if constexpr (std::is_same_v<T, placement::Scatter>) {
          // Thread i goes to core floor(i*C/n); repeated cores take their
          // next hw thread, so SMT siblings are used only when n > C.
          std::vector<std::size_t> used(cores, 0);
          for (std::size_t i = 0; i < n; ++i) {
            std::size_t c = i * cores / n;
            // Uneven SMT: move on to the next core with a free thread.
            for (std::size_t probe = 0; probe < cores; ++probe) {
              const std::size_t idx = (c + probe) % cores;
              if (used[idx] < topo.cores()[idx].hw_threads.size()) {
                c = idx;
                break;
              }
            }
            out.push_back(topo.cores()[c].hw_threads[used[c]++]);
          }
        } else if constexpr (std::is_same_v<T, placement::Random>) {
          out = detail::round_robin(topo, detail::seeded_permutation(cores, p.seed), n);
        } else if constexpr (std::is_same_v<T, placement::SameCore>) {
          const auto& threads = topo.cores().front().hw_threads;
          if (n > threads.size()) {
            throw Error(ErrorCode::InvalidArgument, "samecore placement needs n <= " +
                                                        std::to_string(threads.size()) + " hw threads");
          }
          out.assign(threads.begin(), threads.begin() + static_cast<std::ptrdiff_t>(n));
        } else {
          if (n > p.cpus.size()) {
            throw Error(ErrorCode::InvalidArgument, "explicit placement lists fewer than n cpus");
          }
          std::set<int> seen;
          for (std::size_t i = 0; i < n; ++i) {
            const int cpu = p.cpus[i];
            if (!topo.contains(cpu)) {
              throw Error(ErrorCode::InvalidArgument, "explicit cpu " + std::to_string(cpu) + " not in topology");
            }
            if (!seen.insert(cpu).second) {
              throw Error(ErrorCode::InvalidArgument, "explicit cpu " + std::to_string(cpu) + " repeated");
            }
            out.push_back(cpu);
          }
        }
        return out;
      },
      pattern);
}

/// Pins the calling thread to one logical cpu. Failure is fatal for the
/// measurement, so it throws rather than warns.
inline void pin_current_thread(int cpu) {
  cpu_set_t set;
  CPU_ZERO(&set);
  CPU_SET(cpu, &set);
  if (const int rc = pthread_setaffinity_np(pthread_self(), sizeof(set), &set); rc != 0) {
    throw Error(ErrorCode::Pinning, "cannot pin to cpu " + std::to_string(cpu) + " (errno " + std::to_string(rc) + ")");
  }
}

}  // namespace archprobe
