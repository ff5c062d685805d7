#pragma once

#include <cstddef>

namespace defu::detail {

/// C[M x N] = A[M x K] * B[K x N], all row-major with the given leading
/// dimensions. Every output element accumulates its K products with fused
/// multiply-add in ascending k order starting from zero, so results are
/// independent of blocking and match a scalar std::fma loop bit-for-bit.
template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc);

/// dst[cols x rows] = transpose(src[rows x cols]).
template <typename T>
void transpose(const T* src, std::size_t rows, std::size_t cols, T* dst);

}  // namespace defu::detail
