#pragma once

// Inner loops of the live backend. Each loop feeds its result to an opaque
// sink; the `Sink = false` instantiations exist only for the elision guard
// test and must never be used for measurement.

#include <cstddef>
#include <cstdint>
#include <utility>

#if defined(__x86_64__) || defined(__i386__)
#include <immintrin.h>
#define ARCHPROBE_X86 1
#endif

#include "archprobe/timekit.hpp"

namespace archprobe::live {

inline constexpr int kUnroll = 16;
/// Software prefetch distance in elements (2 KiB ahead).
inline constexpr std::size_t kPrefetchAhead = 256;

template <std::size_t N, class F>
inline void repeat(F&& f) {
  [&]<std::size_t... I>(std::index_sequence<I...>) { ((f(), (void)I), ...); }(std::make_index_sequence<N>{});
}

template <bool Sink = true>
inline std::uint64_t chase_loop(const std::uint64_t* a, std::uint64_t iters) {
  std::uint64_t k = 0;
  for (std::uint64_t b = iters / kUnroll; b != 0; --b) repeat<kUnroll>([&] { k = a[k]; });
  for (std::uint64_t r = iters % kUnroll; r != 0; --r) k = a[k];
  if constexpr (Sink) {
    do_not_optimize(k);
    return k;
  } else {
    return 0;
  }
}

// Vector register types for dependent chains.
using v2d = double __attribute__((vector_size(16)));
using v4d = double __attribute__((vector_size(32)));
using v8d = double __attribute__((vector_size(64)));
using v4f = float __attribute__((vector_size(16)));
using v8f = float __attribute__((vector_size(32)));

template <int W> struct lanes_of;
template <> struct lanes_of<1> { using d = double; using f = float; };
template <> struct lanes_of<2> { using d = v2d; };
template <> struct lanes_of<4> { using d = v4d; using f = v4f; };
template <> struct lanes_of<8> { using d = v8d; using f = v8f; };

inline constexpr int native_vector_bytes() {
#if defined(__AVX512F__)
  return 64;
#elif defined(__AVX__)
  return 32;
#elif defined(__SSE2__)
  return 16;
#else
  return 8;
#endif
}

inline constexpr bool have_fma() {
#if defined(__FMA__)
  return true;
#else
  return false;
#endif
}

/// Pins a value in a register so the compiler can neither fold nor
/// reassociate across it. Costs no instruction.
template <class V>
inline void launder(V& v) {
#if defined(ARCHPROBE_X86)
  if constexpr (sizeof(V) > native_vector_bytes() || sizeof(V) < 8) {
    asm volatile("" : "+m"(v));
  } else if constexpr (sizeof(V) == 64) {
    asm volatile("" : "+v"(v));
  } else {
    asm volatile("" : "+x"(v));
  }
#else
  asm volatile("" : "+m"(v));
#endif
}

template <class V>
inline V fused_multiply_add(V x, V y, V z) {
#if defined(__FMA__)
  if constexpr (sizeof(V) == 8) {
    return __builtin_fma(x, y, z);
  } else if constexpr (sizeof(V) == 16) {
    return _mm_fmadd_pd(x, y, z);
  } else if constexpr (sizeof(V) == 32) {
    return _mm256_fmadd_pd(x, y, z);
  } else {
#if defined(__AVX512F__)
    return _mm512_fmadd_pd(x, y, z);
#else
    return x * y + z;
#endif
  }
#else
  return x * y + z;
#endif
}

/// `steps` applications of `step`, each consuming the previous result.
template <class V, class Step>
inline V dependent_steps(V x, std::uint64_t steps, Step step) {
#pragma GCC unroll 16
  for (std::uint64_t i = 0; i < steps; ++i) {
    x = step(x);
    launder(x);
  }
  return x;
}

/// `streams` independent chains b = b*a (+ c) per lane, iters long.
template <int W, bool Mad, int Streams>
inline void arith_loop(std::uint64_t iters) {
  using V = typename lanes_of<W>::d;
  V a = V{} + 0.999999;
  V c = V{} + 1e-6;
  V b[Streams];
  for (int s = 0; s < Streams; ++s) b[s] = V{} + (1.0 + s);
  launder(a);
  launder(c);
  for (std::uint64_t i = 0; i < iters; ++i) {
    repeat<Streams>([&, s = 0]() mutable {
      if constexpr (Mad) {
        b[s] = fused_multiply_add(b[s], a, c);
      } else {
        b[s] = b[s] * a;
      }
      ++s;
    });
  }
  for (int s = 0; s < Streams; ++s) do_not_optimize(b[s]);
}

template <bool Prefetch, bool Sink = true>
inline double read_kernel(const double* a, std::size_t n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
  std::size_t i = 0;
  for (; i + kUnroll <= n; i += kUnroll) {
    if constexpr (Prefetch) {
      __builtin_prefetch(a + i + kPrefetchAhead);
      __builtin_prefetch(a + i + kPrefetchAhead + 8);
    }
    s0 += a[i + 0]; s1 += a[i + 1]; s2 += a[i + 2]; s3 += a[i + 3];
    s4 += a[i + 4]; s5 += a[i + 5]; s6 += a[i + 6]; s7 += a[i + 7];
    s0 += a[i + 8]; s1 += a[i + 9]; s2 += a[i + 10]; s3 += a[i + 11];
    s4 += a[i + 12]; s5 += a[i + 13]; s6 += a[i + 14]; s7 += a[i + 15];
  }
  for (; i < n; ++i) s0 += a[i];
  double total = ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7));
  if constexpr (Sink) {
    do_not_optimize(total);
    return total;
  } else {
    return 0.0;
  }
}

template <bool Prefetch>
inline void write_kernel(double* a, std::size_t n, double value) {
#pragma GCC unroll 16
  for (std::size_t i = 0; i < n; ++i) {
    if constexpr (Prefetch) {
      if (i % 8 == 0) __builtin_prefetch(a + i + kPrefetchAhead, 1);
    }
    a[i] = value;
  }
  clobber_memory();
}

inline constexpr bool have_streaming_stores() {
#if defined(__SSE2__)
  return true;
#else
  return false;
#endif
}

/// Non-temporal stores; `a` must be 64-byte aligned.
inline void write_streaming_kernel(double* a, std::size_t n, double value) {
  std::size_t i = 0;
#if defined(__AVX512F__)
  const __m512d v = _mm512_set1_pd(value);
  for (; i + 8 <= n; i += 8) _mm512_stream_pd(a + i, v);
#elif defined(__AVX__)
  const __m256d v = _mm256_set1_pd(value);
  for (; i + 4 <= n; i += 4) _mm256_stream_pd(a + i, v);
#elif defined(__SSE2__)
  const __m128d v = _mm_set1_pd(value);
  for (; i + 2 <= n; i += 2) _mm_stream_pd(a + i, v);
#endif
  for (; i < n; ++i) a[i] = value;
#if defined(__SSE2__)
  _mm_sfence();
#endif
  clobber_memory();
}

/// Two- and three-array streaming kernels; `f` maps one element index.
template <bool Prefetch, class F>
inline void stream_kernel(std::size_t n, const double* const* prefetch_arrays, int arrays, F&& f) {
#pragma GCC unroll 16
  for (std::size_t i = 0; i < n; ++i) {
    if constexpr (Prefetch) {
      if (i % 8 == 0) {
        for (int k = 0; k < arrays; ++k) __builtin_prefetch(prefetch_arrays[k] + i + kPrefetchAhead);
      }
    }
    f(i);
  }
  clobber_memory();
}

}  // namespace archprobe::live
