// SPDX-License-Identifier: Apache-2.0
#include "mmt/numerics/gemm.hpp"

#include <algorithm>
#include <vector>

namespace mmt::num {
namespace {

constexpr std::size_t kBlockK = 256;
constexpr std::size_t kBlockN = 512;
constexpr std::size_t kPanel = 8;  // columns per packed B panel

// Each accumulator lane sums over p in ascending order, exactly like a plain
// scalar loop, so a remainder row gets the same bits as a full tile row.
using v4 = double __attribute__((vector_size(32)));

#if defined(__GNUC__)
#define MMT_INLINE inline __attribute__((always_inline))
#else
#define MMT_INLINE inline
#endif

template <std::size_t MR>
MMT_INLINE void micro(const double* a, std::size_t lda, const double* panel, std::size_t kc, double* c, std::size_t ldc,
           std::size_t cols) {
  v4 acc[MR][2];
  double tile[MR][kPanel] = {};
  for (std::size_t r = 0; r < MR; ++r) {
    for (std::size_t j = 0; j < cols; ++j) tile[r][j] = c[r * ldc + j];
    __builtin_memcpy(&acc[r][0], &tile[r][0], sizeof(v4));
    __builtin_memcpy(&acc[r][1], &tile[r][4], sizeof(v4));
  }
  for (std::size_t p = 0; p < kc; ++p) {
    v4 b0, b1;
    __builtin_memcpy(&b0, panel + p * kPanel, sizeof(v4));
    __builtin_memcpy(&b1, panel + p * kPanel + 4, sizeof(v4));
    for (std::size_t r = 0; r < MR; ++r) {
      const double av = a[r * lda + p];
      acc[r][0] += av * b0;
      acc[r][1] += av * b1;
    }
  }
  for (std::size_t r = 0; r < MR; ++r) {
    __builtin_memcpy(&tile[r][0], &acc[r][0], sizeof(v4));
    __builtin_memcpy(&tile[r][4], &acc[r][1], sizeof(v4));
    for (std::size_t j = 0; j < cols; ++j) c[r * ldc + j] = tile[r][j];
  }
}

MMT_INLINE void gemm_body(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
                          bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  if (m == 0 || n == 0 || k == 0) return;
  std::vector<double> packed;
  for (std::size_t j0 = 0; j0 < n; j0 += kBlockN) {
    const std::size_t j1 = std::min(n, j0 + kBlockN);
    const std::size_t panels = (j1 - j0 + kPanel - 1) / kPanel;
    for (std::size_t k0 = 0; k0 < k; k0 += kBlockK) {
      const std::size_t kc = std::min(k, k0 + kBlockK) - k0;
      packed.assign(panels * kc * kPanel, 0.0);
      for (std::size_t q = 0; q < panels; ++q) {
        const std::size_t jb = j0 + q * kPanel, cols = std::min(kPanel, j1 - jb);
        double* dst = packed.data() + q * kc * kPanel;
        for (std::size_t p = 0; p < kc; ++p) {
          std::copy_n(b + (k0 + p) * n + jb, cols, dst + p * kPanel);
        }
      }
      for (std::size_t i = 0; i < m; i += 4) {
        const std::size_t rows = std::min<std::size_t>(4, m - i);
        for (std::size_t q = 0; q < panels; ++q) {
          const std::size_t jb = j0 + q * kPanel, cols = std::min(kPanel, j1 - jb);
          const double* ap = a + i * k + k0;
          const double* bp = packed.data() + q * kc * kPanel;
          double* cp = c + i * n + jb;
          switch (rows) {
            case 4: micro<4>(ap, k, bp, kc, cp, n, cols); break;
            case 3: micro<3>(ap, k, bp, kc, cp, n, cols); break;
            case 2: micro<2>(ap, k, bp, kc, cp, n, cols); break;
            default: micro<1>(ap, k, bp, kc, cp, n, cols); break;
          }
        }
      }
    }
  }
}

// The wide build differs only in register width; without FMA every lane does the
// same multiply then add, so both paths give identical results.
#if defined(__GNUC__) && defined(__x86_64__)
__attribute__((target("avx2"))) void gemm_avx2(const double* a, const double* b, double* c, std::size_t m,
                                               std::size_t k, std::size_t n, bool accumulate) {
  gemm_body(a, b, c, m, k, n, accumulate);
}
#endif

void gemm_generic(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
                  bool accumulate) {
  gemm_body(a, b, c, m, k, n, accumulate);
}

}  // namespace

void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate) {
#if defined(__GNUC__) && defined(__x86_64__)
  static const bool wide = __builtin_cpu_supports("avx2");
  if (wide) return gemm_avx2(a, b, c, m, k, n, accumulate);
#endif
  gemm_generic(a, b, c, m, k, n, accumulate);
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  }
  gemm(a, bt.data(), c, m, k, n, accumulate);
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  std::vector<double> at(k * m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) at[p * m + i] = a[i * k + p];
  }
  gemm(at.data(), b, c, k, m, n, accumulate);
}

}  // namespace mmt::num
