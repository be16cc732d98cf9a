#pragma once

#include <cstddef>
#include <cstring>
#include <new>
#include <span>
#include <utility>

namespace archprobe {

/// Owning, fixed-size array of trivially copyable T with over-aligned
/// storage. Elements are zero-initialized.
template <class T>
class AlignedBuffer {
 public:
  AlignedBuffer() = default;

  AlignedBuffer(std::size_t count, std::size_t alignment) : count_(count), alignment_(alignment) {
    if (count_ == 0) return;
    data_ = static_cast<T*>(::operator new(count_ * sizeof(T), std::align_val_t{alignment_}));
    std::memset(static_cast<void*>(data_), 0, count_ * sizeof(T));
  }

  AlignedBuffer(const AlignedBuffer&) = delete;
  AlignedBuffer& operator=(const AlignedBuffer&) = delete;

  AlignedBuffer(AlignedBuffer&& other) noexcept
      : data_(std::exchange(other.data_, nullptr)),
        count_(std::exchange(other.count_, 0)),
        alignment_(other.alignment_) {}

  AlignedBuffer& operator=(AlignedBuffer&& other) noexcept {
    if (this != &other) {
      release();
      data_ = std::exchange(other.data_, nullptr);
      count_ = std::exchange(other.count_, 0);
      alignment_ = other.alignment_;
    }
    return *this;
  }

  ~AlignedBuffer() { release(); }

  T* data() { return data_; }
  const T* data() const { return data_; }
  std::size_t size() const { return count_; }
  std::size_t alignment() const { return alignment_; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  std::span<T> span() { return {data_, count_}; }
  std::span<const T> span() const { return {data_, count_}; }

 private:
  void release() {
    if (data_) ::operator delete(static_cast<void*>(data_), std::align_val_t{alignment_});
    data_ = nullptr;
  }

  T* data_ = nullptr;
  std::size_t count_ = 0;
  std::size_t alignment_ = alignof(T);
};

}  // namespace archprobe
