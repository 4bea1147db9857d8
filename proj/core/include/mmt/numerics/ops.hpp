// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mmt/numerics/autograd.hpp"
#include "mmt/numerics/random.hpp"

namespace mmt::num {

// Plain tensor helpers ------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// Softmax along `axis` of a rank-1 or rank-2 tensor, max-subtracted.
Tensor softmax(const Tensor& x, std::size_t axis);
double dot(std::span<const double> a, std::span<const double> b) noexcept;
double l2_norm(std::span<const double> a) noexcept;

// Differentiable ops --------------------------------------------------------
//
// Row-oriented: an [R, C] input is R independent rows unless stated otherwise.

Var matmul(const Var& a, const Var& b);
/// y = x W + b. `bias` may be an empty Var.
Var linear(const Var& x, const Var& weight, const Var& bias);
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
Var sigmoid(const Var& x);
/// Exact GELU, x * Phi(x).
Var gelu(const Var& x);
Var softmax_rows(const Var& x);
/// Per-row normalisation with affine [C] gamma and beta.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-12);
/// Inverted dropout. Identity when p == 0.
Var dropout(const Var& x, double p, Rng& rng);
/// out[i] = table[index[i]]; index -1 selects a zero row.
Var gather_rows(const Var& table, std::span<const std::int64_t> index);
Var concat_rows(std::span<const Var> parts);

enum class PoolMode { zero, mean, max };

struct Segment {
  std::size_t offset = 0;
  std::size_t length = 0;
};

/// One output row per segment of input rows. Empty segments give a zero row;
/// max keeps the first maximum on ties.
Var segment_pool(const Var& x, std::span<const Segment> segments, PoolMode mode);

/// Row-wise x / max(||x||, eps). Rows below eps bump the diagnostics counter.
Var l2_normalize_rows(const Var& x, double eps = 1e-12);
Var sum_all(const Var& x);

/// Number of rows normalised with the epsilon floor since process start.
std::uint64_t zero_norm_events() noexcept;

}  // namespace mmt::num
