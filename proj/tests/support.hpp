#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "archprobe/synthmodel.hpp"

#ifndef ARCHPROBE_SOURCE_DIR
#define ARCHPROBE_SOURCE_DIR "."
#endif

namespace archprobe::testing {

inline std::filesystem::path source_path(const std::string& rel) {
  return std::filesystem::path(ARCHPROBE_SOURCE_DIR) / rel;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "archprobe") {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Random cache hierarchies for round-trip tests: 1-3 levels, the first at
/// 16, 32 or 64 KiB, later levels 4-16x larger (powers of two) and at most
/// 8 MiB so the default grid still sees memory, level-to-level and
/// level-to-memory latency ratios of at least 3x, line 32/64/128 B.
inline SyntheticHierarchy random_hierarchy(std::mt19937_64& rng) {
  auto pick = [&](std::uint64_t n) { return static_cast<std::uint64_t>(rng() % n); };
  auto uniform = [&](double lo, double hi) {
    return lo + (hi - lo) * static_cast<double>(rng() >> 11) * 0x1.0p-53;
  };
  SyntheticHierarchy m;
  m.levels.clear();
  const std::size_t count = 1 + pick(3);
  std::uint64_t capacity = (16u << 10) << pick(3);
  double latency = uniform(2.0, 5.0);
  for (std::size_t i = 0; i < count; ++i) {
    if (i > 0) {
      const std::uint64_t room = (8u << 20) / capacity;  // >= 4 by construction below
      std::uint64_t shift = 2 + pick(3);
      while ((1ull << shift) > room) --shift;
      capacity <<= shift;
      latency *= uniform(3.0, 8.0);
    }
    m.levels.push_back({capacity, latency});
    if (i + 1 < count && (8u << 20) / capacity < 4) break;
  }
  m.dram_latency_cycles = m.levels.back().latency_cycles * uniform(3.0, 8.0);
  m.line_size_bytes = 32u << pick(3);
  m.freq_ghz = uniform(1.0, 3.5);
  m.validate();
  return m;
}

}  // namespace archprobe::testing
