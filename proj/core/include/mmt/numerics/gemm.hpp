// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

namespace mmt::num {

/// C[m,n] (+)= A[m,k] * B[k,n], all row-major.
///
/// Each output element is accumulated over k in ascending order regardless of
/// blocking, so a row of C depends only on the matching row of A and results
/// are identical whatever batch the row is computed in.
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate);

/// C[m,n] (+)= A[m,k] * B[n,k]^T.
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate);

/// C[k,n] (+)= A[m,k]^T * B[m,n].
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate);

}  // namespace mmt::num
