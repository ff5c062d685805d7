#include "gemm.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace defu::detail {
namespace {

constexpr std::size_t kBlockK = 256;

// Register tile sizes. NR spans two vector registers on AVX-512.
template <typename T>
struct Tile {
#if defined(__AVX512F__)
  static constexpr std::size_t mr = 8;
  static constexpr std::size_t nr = 2 * 64 / sizeof(T);
#else
  static constexpr std::size_t mr = 4;
  static constexpr std::size_t nr = 16;
#endif
};

// Portable micro-kernel: packed A (k-major, mr lanes), packed B (k-major, nr
// lanes), tile C with leading dimension ldc.
template <typename T>
[[maybe_unused]] void micro_generic(std::size_t kc, const T* pa,
                                    const T* pb, T* c, std::size_t ldc,
                                    bool init) {
  constexpr std::size_t mr = Tile<T>::mr;
  constexpr std::size_t nr = Tile<T>::nr;
  T acc[mr][nr];
  for (std::size_t i = 0; i < mr; ++i) {
    for (std::size_t j = 0; j < nr; ++j) {
      acc[i][j] = init ? T(0) : c[i * ldc + j];
    }
  }
  for (std::size_t p = 0; p < kc; ++p) {
    const T* brow = pb + p * nr;
    for (std::size_t i = 0; i < mr; ++i) {
      const T av = pa[p * mr + i];
      for (std::size_t j = 0; j < nr; ++j) {
        acc[i][j] = std::fma(av, brow[j], acc[i][j]);
      }
    }
  }
  for (std::size_t i = 0; i < mr; ++i) {
    for (std::size_t j = 0; j < nr; ++j) c[i * ldc + j] = acc[i][j];
  }
}

#if defined(__AVX512F__)
void micro(std::size_t kc, const float* pa, const float* pb, float* c,
           std::size_t ldc, bool init) {
  constexpr std::size_t mr = Tile<float>::mr;
  __m512 acc[mr][2];
  for (std::size_t i = 0; i < mr; ++i) {
    if (init) {
      acc[i][0] = _mm512_setzero_ps();
      acc[i][1] = _mm512_setzero_ps();
    } else {
      acc[i][0] = _mm512_loadu_ps(c + i * ldc);
      acc[i][1] = _mm512_loadu_ps(c + i * ldc + 16);
    }
  }
  for (std::size_t p = 0; p < kc; ++p) {
    const __m512 b0 = _mm512_loadu_ps(pb + p * 32);
    const __m512 b1 = _mm512_loadu_ps(pb + p * 32 + 16);
    for (std::size_t i = 0; i < mr; ++i) {
      const __m512 av = _mm512_set1_ps(pa[p * mr + i]);
      acc[i][0] = _mm512_fmadd_ps(av, b0, acc[i][0]);
      acc[i][1] = _mm512_fmadd_ps(av, b1, acc[i][1]);
    }
  }
  for (std::size_t i = 0; i < mr; ++i) {
    _mm512_storeu_ps(c + i * ldc, acc[i][0]);
    _mm512_storeu_ps(c + i * ldc + 16, acc[i][1]);
  }
}

void micro(std::size_t kc, const double* pa, const double* pb, double* c,
           std::size_t ldc, bool init) {
  constexpr std::size_t mr = Tile<double>::mr;
  __m512d acc[mr][2];
  for (std::size_t i = 0; i < mr; ++i) {
    if (init) {
      acc[i][0] = _mm512_setzero_pd();
      acc[i][1] = _mm512_setzero_pd();
    } else {
      acc[i][0] = _mm512_loadu_pd(c + i * ldc);
      acc[i][1] = _mm512_loadu_pd(c + i * ldc + 8);
    }
  }
  for (std::size_t p = 0; p < kc; ++p) {
    const __m512d b0 = _mm512_loadu_pd(pb + p * 16);
    const __m512d b1 = _mm512_loadu_pd(pb + p * 16 + 8);
    for (std::size_t i = 0; i < mr; ++i) {
      const __m512d av = _mm512_set1_pd(pa[p * mr + i]);
      acc[i][0] = _mm512_fmadd_pd(av, b0, acc[i][0]);
      acc[i][1] = _mm512_fmadd_pd(av, b1, acc[i][1]);
    }
  }
  for (std::size_t i = 0; i < mr; ++i) {
    _mm512_storeu_pd(c + i * ldc, acc[i][0]);
    _mm512_storeu_pd(c + i * ldc + 8, acc[i][1]);
  }
}
#else
template <typename T>
void micro(std::size_t kc, const T* pa, const T* pb, T* c, std::size_t ldc,
           bool init) {
  micro_generic(kc, pa, pb, c, ldc, init);
}
#endif

}  // namespace

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T* c,
          std::size_t ldc) {
  constexpr std::size_t mr = Tile<T>::mr;
  constexpr std::size_t nr = Tile<T>::nr;
  if (m == 0 || n == 0) return;
  if (k == 0) {
    for (std::size_t i = 0; i < m; ++i) std::fill_n(c + i * ldc, n, T(0));
    return;
  }
  const std::size_t groups = (m + mr - 1) / mr;
  std::vector<T> packed_a(groups * mr * kBlockK);
  std::vector<T> packed_b(kBlockK * nr);
  T edge[mr * nr];

  for (std::size_t k0 = 0; k0 < k; k0 += kBlockK) {
    const std::size_t kc = std::min(kBlockK, k - k0);
    const bool init = k0 == 0;
    for (std::size_t g = 0; g < groups; ++g) {
      T* dst = packed_a.data() + g * mr * kc;
      for (std::size_t p = 0; p < kc; ++p) {
        for (std::size_t r = 0; r < mr; ++r) {
          const std::size_t row = g * mr + r;
          dst[p * mr + r] = row < m ? a[row * lda + k0 + p] : T(0);
        }
      }
    }
    for (std::size_t j0 = 0; j0 < n; j0 += nr) {
      const std::size_t ncols = std::min(nr, n - j0);
      for (std::size_t p = 0; p < kc; ++p) {
        const T* src = b + (k0 + p) * ldb + j0;
        T* dst = packed_b.data() + p * nr;
        std::copy_n(src, ncols, dst);
        std::fill(dst + ncols, dst + nr, T(0));
      }
      for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t row0 = g * mr;
        const std::size_t nrows = std::min(mr, m - row0);
        const T* pa = packed_a.data() + g * mr * kc;
        T* ctile = c + row0 * ldc + j0;
        if (nrows == mr && ncols == nr) {
          micro(kc, pa, packed_b.data(), ctile, ldc, init);
          continue;
        }
        if (!init) {
          for (std::size_t i = 0; i < nrows; ++i) {
            std::copy_n(ctile + i * ldc, ncols, edge + i * nr);
          }
        }
        micro(kc, pa, packed_b.data(), edge, nr, init);
        for (std::size_t i = 0; i < nrows; ++i) {
          std::copy_n(edge + i * nr, ncols, ctile + i * ldc);
        }
      }
    }
  }
}

template <typename T>
void transpose(const T* src, std::size_t rows, std::size_t cols, T* dst) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kBlock) {
    const std::size_t r1 = std::min(rows, r0 + kBlock);
    for (std::size_t c0 = 0; c0 < cols; c0 += kBlock) {
      const std::size_t c1 = std::min(cols, c0 + kBlock);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t col = c0; col < c1; ++col) {
          dst[col * rows + r] = src[r * cols + col];
        }
      }
    }
  }
}

template void gemm<float>(std::size_t, std::size_t, std::size_t, const float*,
                          std::size_t, const float*, std::size_t, float*,
                          std::size_t);
template void gemm<double>(std::size_t, std::size_t, std::size_t,
                           const double*, std::size_t, const double*,
                           std::size_t, double*, std::size_t);
template void transpose<float>(const float*, std::size_t, std::size_t, float*);
template void transpose<double>(const double*, std::size_t, std::size_t,
                                double*);

}  // namespace defu::detail
