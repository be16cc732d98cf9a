#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "archprobe/error.hpp"
#include "archprobe/topo.hpp"

namespace archprobe {

namespace detail {

template <class Enum, std::size_t N>
Enum parse_enum(std::string_view text, const std::array<std::pair<Enum, std::string_view>, N>& names,
                std::string_view what) {
  for (const auto& [value, name] : names) {
    if (name == text) return value;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown " + std::string(what) + " '" + std::string(text) + "'");
}

template <class Enum, std::size_t N>
std::string_view enum_name(Enum value, const std::array<std::pair<Enum, std::string_view>, N>& names) {
  for (const auto& [v, name] : names) {
    if (v == value) return name;
  }
  return "?";
}

}  // namespace detail

enum class OpKind { Add, Mul, Fma, Div, Custom };

inline constexpr std::array<std::pair<OpKind, std::string_view>, 5> kOpKindNames{{
    {OpKind::Add, "add"},
    {OpKind::Mul, "mul"},
    {OpKind::Fma, "fma"},
    {OpKind::Div, "div"},
    {OpKind::Custom, "custom"},
}};

inline std::string_view to_string(OpKind k) { return detail::enum_name(k, kOpKindNames); }

/// A dependent chain `x = op(x, y)` of chain_len operations. In pair mode
/// the chain alternates `op` and `pair_op` (e.g. a conversion and its
/// inverse) and latency is reported per pair.
struct ChainSpec {
  OpKind op_kind = OpKind::Add;
  std::string custom_op;  // operation name when op_kind == Custom
  std::string pair_op;    // second half of a pair; empty means op itself
  int lane_width = 8;
  int chain_len = 100;
  bool pair_mode = false;

  std::string op_name() const {
    return op_kind == OpKind::Custom ? custom_op : std::string(to_string(op_kind));
  }

  std::string partner_name() const { return pair_op.empty() ? op_name() : pair_op; }

  void validate() const {
    if (chain_len < 2) throw Error(ErrorCode::InvalidArgument, "chain_len must be >= 2");
    if (pair_mode && chain_len % 2 != 0) {
      throw Error(ErrorCode::InvalidArgument, "chain_len must be even in pair mode");
    }
    if (lane_width < 1) throw Error(ErrorCode::InvalidArgument, "lane_width must be >= 1");
    if (op_kind == OpKind::Custom && custom_op.empty()) {
      throw Error(ErrorCode::InvalidArgument, "custom chain needs an operation name");
    }
  }

  bool operator==(const ChainSpec&) const = default;
};

inline OpKind parse_op_kind(std::string_view s) {
  for (const auto& [value, name] : kOpKindNames) {
    if (name == s && value != OpKind::Custom) return value;
  }
  return OpKind::Custom;
}

enum class BandwidthKind { Read, Write, WriteStreaming, Scale1, Scale2, Saxpy1, Saxpy2, Triad };

inline constexpr std::array<std::pair<BandwidthKind, std::string_view>, 8> kBandwidthKindNames{{
    {BandwidthKind::Read, "read"},
    {BandwidthKind::Write, "write"},
    {BandwidthKind::WriteStreaming, "write-streaming"},
    {BandwidthKind::Scale1, "scale1"},
    {BandwidthKind::Scale2, "scale2"},
    {BandwidthKind::Saxpy1, "saxpy1"},
    {BandwidthKind::Saxpy2, "saxpy2"},
    {BandwidthKind::Triad, "triad"},
}};

inline constexpr std::array<BandwidthKind, 8> kAllBandwidthKinds{
    BandwidthKind::Read,   BandwidthKind::Write,  BandwidthKind::WriteStreaming, BandwidthKind::Scale1,
    BandwidthKind::Scale2, BandwidthKind::Saxpy1, BandwidthKind::Saxpy2,         BandwidthKind::Triad};

inline std::string_view to_string(BandwidthKind k) { return detail::enum_name(k, kBandwidthKindNames); }

inline BandwidthKind parse_bandwidth_kind(std::string_view s) {
  return detail::parse_enum(s, kBandwidthKindNames, "bandwidth kind");
}

/// Semantic bytes moved per element index. Write-allocate traffic is not
/// counted, so a plain write kernel reports roughly half the bus traffic.
inline constexpr double useful_bytes_per_element(BandwidthKind k) {
  switch (k) {
    case BandwidthKind::Read:
    case BandwidthKind::Write:
    case BandwidthKind::WriteStreaming: return 8.0;
    case BandwidthKind::Scale1:
    case BandwidthKind::Scale2: return 16.0;
    case BandwidthKind::Saxpy1:
    case BandwidthKind::Saxpy2:
    case BandwidthKind::Triad: return 24.0;
  }
  return 8.0;
}

/// Number of distinct arrays the kernel touches.
inline constexpr int arrays_per_kind(BandwidthKind k) {
  switch (k) {
    case BandwidthKind::Read:
    case BandwidthKind::Write:
    case BandwidthKind::WriteStreaming:
    case BandwidthKind::Scale2: return 1;
    case BandwidthKind::Scale1:
    case BandwidthKind::Saxpy2: return 2;
    case BandwidthKind::Saxpy1:
    case BandwidthKind::Triad: return 3;
  }
  return 1;
}

enum class ArithMix { Mul, Mad };

inline constexpr std::array<std::pair<ArithMix, std::string_view>, 2> kArithMixNames{{
    {ArithMix::Mul, "mul"},
    {ArithMix::Mad, "mad"},
}};

inline std::string_view to_string(ArithMix m) { return detail::enum_name(m, kArithMixNames); }
inline ArithMix parse_arith_mix(std::string_view s) { return detail::parse_enum(s, kArithMixNames, "mix"); }
inline constexpr double flops_per_element(ArithMix m) { return m == ArithMix::Mad ? 2.0 : 1.0; }

enum class MathFn { ExpE, Exp2, LogE, Log2 };

inline constexpr std::array<std::pair<MathFn, std::string_view>, 4> kMathFnNames{{
    {MathFn::ExpE, "exp_e"},
    {MathFn::Exp2, "exp_2"},
    {MathFn::LogE, "log_e"},
    {MathFn::Log2, "log_2"},
}};

inline std::string_view to_string(MathFn f) { return detail::enum_name(f, kMathFnNames); }
inline MathFn parse_math_fn(std::string_view s) { return detail::parse_enum(s, kMathFnNames, "math function"); }

template <class T>
inline T apply_math(MathFn fn, T x) {
  switch (fn) {
    case MathFn::ExpE: return std::exp(x);
    case MathFn::Exp2: return std::exp2(x);
    case MathFn::LogE: return std::log(x);
    case MathFn::Log2: return std::log2(x);
  }
  return x;
}

enum class Precision { Single, Double };

inline constexpr std::array<std::pair<Precision, std::string_view>, 2> kPrecisionNames{{
    {Precision::Single, "single"},
    {Precision::Double, "double"},
}};

inline std::string_view to_string(Precision p) { return detail::enum_name(p, kPrecisionNames); }
inline Precision parse_precision(std::string_view s) {
  return detail::parse_enum(s, kPrecisionNames, "precision");
}

enum class CoherencyState { Modified, Exclusive, Shared };

inline constexpr std::array<std::pair<CoherencyState, std::string_view>, 3> kCoherencyStateNames{{
    {CoherencyState::Modified, "modified"},
    {CoherencyState::Exclusive, "exclusive"},
    {CoherencyState::Shared, "shared"},
}};

inline std::string_view to_string(CoherencyState s) { return detail::enum_name(s, kCoherencyStateNames); }
inline CoherencyState parse_coherency_state(std::string_view s) {
  return detail::parse_enum(s, kCoherencyStateNames, "coherency state");
}

/// Elements a stanza triad touches over `elements`: runs of `stanza`
/// contiguous elements separated by `jump` skipped ones.
inline std::uint64_t striad_touched_elements(std::uint64_t elements, std::uint64_t stanza, std::uint64_t jump) {
  if (stanza == 0) return 0;
  const std::uint64_t period = stanza + jump;
  const std::uint64_t full = elements / period;
  const std::uint64_t rest = elements % period;
  return full * stanza + (rest < stanza ? rest : stanza);
}

struct BandwidthPoint {
  std::size_t threads = 1;
  PlacementPattern placement = placement::Compact{};
  double gbps = 0.0;

  bool operator==(const BandwidthPoint&) const = default;
};

/// Bandwidth as a function of thread count for one kernel configuration.
struct BandwidthCurve {
  BandwidthKind kind = BandwidthKind::Read;
  bool shared = false;
  bool software_prefetch = true;
  std::uint64_t buffer_bytes = 0;
  std::vector<BandwidthPoint> points;

  bool operator==(const BandwidthCurve&) const = default;
};

/// Chase latency over a (size, stride) grid; latency_ns[size][stride].
struct LatencyGrid {
  std::vector<std::uint64_t> sizes;
  std::vector<std::uint64_t> strides;
  std::vector<std::vector<double>> latency_ns;

  void validate() const {
    auto ascending = [](const std::vector<std::uint64_t>& v) {
      for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] <= v[i - 1]) return false;
      }
      return !v.empty();
    };
    if (!ascending(sizes) || !ascending(strides)) {
      throw Error(ErrorCode::InvalidArgument, "latency grid axes must be non-empty and strictly ascending");
    }
    if (latency_ns.size() != sizes.size()) throw Error(ErrorCode::InvalidArgument, "latency grid row count mismatch");
    for (const auto& row : latency_ns) {
      if (row.size() != strides.size()) throw Error(ErrorCode::InvalidArgument, "latency grid column count mismatch");
      for (double v : row) {
        if (!(v > 0) || !std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "latency grid entries must be positive");
      }
    }
  }

  bool operator==(const LatencyGrid&) const = default;
};

}  // namespace archprobe
