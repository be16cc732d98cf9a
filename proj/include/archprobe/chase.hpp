#pragma once

#include <cstdint>
#include <numeric>
#include <span>
#include <string>

#include "archprobe/aligned_buffer.hpp"
#include "archprobe/error.hpp"

namespace archprobe {

inline constexpr std::uint64_t kChaseElementBytes = 8;
inline constexpr std::size_t kChaseAlignment = 4096;

/// Size and stride of a strided pointer chase, validated.
struct ChaseGeometry {
  std::uint64_t size_bytes = 0;
  std::uint64_t stride_bytes = 0;

  std::uint64_t elements() const { return size_bytes / kChaseElementBytes; }
  std::uint64_t stride_elements() const { return stride_bytes / kChaseElementBytes; }

  /// Steps taken by k = A[k] before returning to the start.
  std::uint64_t cycle_length() const { return elements() / std::gcd(elements(), stride_elements()); }

  bool operator==(const ChaseGeometry&) const = default;
};

inline ChaseGeometry make_chase_geometry(std::uint64_t size_bytes, std::uint64_t stride_bytes) {
  if (size_bytes == 0 || stride_bytes == 0 || size_bytes % kChaseElementBytes != 0 ||
      stride_bytes % kChaseElementBytes != 0) {
    throw Error(ErrorCode::InvalidArgument, "chase size and stride must be positive multiples of 8 bytes (got " +
                                                std::to_string(size_bytes) + ", " + std::to_string(stride_bytes) + ")");
  }
  if (stride_bytes >= size_bytes) {
    throw Error(ErrorCode::InvalidArgument, "chase stride " + std::to_string(stride_bytes) +
                                                " must be smaller than size " + std::to_string(size_bytes));
  }
  return ChaseGeometry{size_bytes, stride_bytes};
}

/// Index array with A[k] = (k + stride) mod S, page aligned.
class ChaseArray {
 public:
  explicit ChaseArray(ChaseGeometry geometry)
      : geometry_(geometry), indices_(geometry.elements(), kChaseAlignment) {
    const std::uint64_t n = geometry_.elements();
    const std::uint64_t step = geometry_.stride_elements();
    for (std::uint64_t k = 0; k < n; ++k) indices_[k] = (k + step) % n;
  }

  const ChaseGeometry& geometry() const { return geometry_; }
  std::uint64_t size_bytes() const { return geometry_.size_bytes; }
  std::uint64_t stride_bytes() const { return geometry_.stride_bytes; }
  std::span<const std::uint64_t> indices() const { return indices_.span(); }
  std::span<std::uint64_t> mutable_indices() { return indices_.span(); }

 private:
  ChaseGeometry geometry_;
  AlignedBuffer<std::uint64_t> indices_;
};

inline ChaseArray build_chase(std::uint64_t size_bytes, std::uint64_t stride_bytes) {
  return ChaseArray(make_chase_geometry(size_bytes, stride_bytes));
}

}  // namespace archprobe
