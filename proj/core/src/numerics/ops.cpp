// SPDX-License-Identifier: Apache-2.0
#include "mmt/numerics/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>

#include "mmt/errors.hpp"
#include "mmt/numerics/gemm.hpp"

namespace mmt::num {
namespace {

std::atomic<std::uint64_t> g_zero_norm_events{0};

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(std::string(what) + " expects a rank-2 tensor, got " + shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

Node& input(Node& self, std::size_t i) { return *self.inputs[i]; }

}  // namespace

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul inner extents differ: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor c(Shape{a.rows(), b.cols()});
  gemm(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols(), false);
  return c;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  Tensor t(Shape{a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
  }
  return t;
}

namespace {

void softmax_inplace(double* x, std::size_t n, std::size_t stride) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, x[i * stride]);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    x[i * stride] = std::exp(x[i * stride] - mx);
    total += x[i * stride];
  }
  for (std::size_t i = 0; i < n; ++i) x[i * stride] /= total;
}

}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (x.rank() == 0 || x.rank() > 2 || axis >= x.rank()) {
    throw DimensionError("softmax: unsupported axis " + std::to_string(axis) + " for shape " + shape_string(x.shape()));
  }
  if (x.shape()[axis] == 0) throw DimensionError("softmax over an empty axis");
  Tensor y = x;
  if (x.rank() == 1) {
    softmax_inplace(y.data(), y.size(), 1);
  } else if (axis == 1) {
    for (std::size_t r = 0; r < y.rows(); ++r) softmax_inplace(y.data() + r * y.cols(), y.cols(), 1);
  } else {
    for (std::size_t c = 0; c < y.cols(); ++c) softmax_inplace(y.data() + c, y.rows(), y.cols());
  }
  return y;
}

double dot(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> a) noexcept { return std::sqrt(dot(a, a)); }

// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  Tensor out = matmul(a.value(), b.value());
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& na = input(self, 0);
    Node& nb = input(self, 1);
    const std::size_t m = na.value.rows(), k = na.value.cols(), n = nb.value.cols();
    if (na.requires_grad) gemm_nt(self.grad.data(), nb.value.data(), na.grad_buffer().data(), m, n, k, true);
    if (nb.requires_grad) gemm_tn(na.value.data(), self.grad.data(), nb.grad_buffer().data(), m, k, n, true);
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  require_matrix(xv, "linear");
  require_matrix(wv, "linear");
  if (xv.cols() != wv.rows()) {
    throw DimensionError("linear: input width " + std::to_string(xv.cols()) + " does not match weight " +
                         shape_string(wv.shape()));
  }
  const std::size_t m = xv.rows(), k = xv.cols(), n = wv.cols();
  Tensor out(Shape{m, n});
  if (bias) {
    if (bias.value().size() != n) throw DimensionError("linear: bias length does not match output width");
    for (std::size_t i = 0; i < m; ++i) std::copy_n(bias.value().data(), n, out.data() + i * n);
  }
  gemm(xv.data(), wv.data(), out.data(), m, k, n, static_cast<bool>(bias));
  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(bias);
  return make_result(std::move(out), std::move(inputs), [m, k, n](Node& self) {
    Node& nx = input(self, 0);
    Node& nw = input(self, 1);
    if (nx.requires_grad) gemm_nt(self.grad.data(), nw.value.data(), nx.grad_buffer().data(), m, n, k, true);
    if (nw.requires_grad) gemm_tn(nx.value.data(), self.grad.data(), nw.grad_buffer().data(), m, k, n, true);
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
      double* gb = self.inputs[2]->grad_buffer().data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* g = self.grad.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[j];
      }
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    accumulate_grad(input(self, 0), self.grad);
    accumulate_grad(input(self, 1), self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& na = input(self, 0);
    Node& nb = input(self, 1);
    if (na.requires_grad) {
      Tensor& g = na.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.value[i];
    }
    if (nb.requires_grad) {
      Tensor& g = nb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na.value[i];
    }
  });
}

Var scale(const Var& x, double factor) {
  Tensor out = x.value();
  for (auto& v : out.values()) v *= factor;
  return make_result(std::move(out), {x}, [factor](Node& self) {
    Node& nx = input(self, 0);
    Tensor& g = nx.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Var sigmoid(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  return make_result(std::move(out), {x}, [](Node& self) {
    Tensor& g = input(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = self.value[i];
      g[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

Var gelu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  return make_result(std::move(out), {x}, [](Node& self) {
    Node& nx = input(self, 0);
    Tensor& g = nx.grad_buffer();
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = nx.value[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

Var softmax_rows(const Var& x) {
  require_matrix(x.value(), "softmax_rows");
  Tensor out = softmax(x.value(), 1);
  return make_result(std::move(out), {x}, [](Node& self) {
    Tensor& g = input(self, 0).grad_buffer();
    const std::size_t rows = self.value.rows(), cols = self.value.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * cols;
      const double* dy = self.grad.data() + r * cols;
      double inner = 0.0;
      for (std::size_t c = 0; c < cols; ++c) inner += y[c] * dy[c];
      double* dx = g.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) dx[c] += y[c] * (dy[c] - inner);
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Tensor& xv = x.value();
  require_matrix(xv, "layer_norm");
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (gamma.value().size() != cols || beta.value().size() != cols) {
    throw DimensionError("layer_norm: affine parameters must match row width");
  }
  Tensor normalized(Shape{rows, cols});
  std::vector<double> inv_std(rows);
  Tensor out(Shape{rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * cols;
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += xr[c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      const double n = (xr[c] - mean) * inv_std[r];
      normalized.at(r, c) = n;
      out.at(r, c) = n * gamma.value()[c] + beta.value()[c];
    }
  }
  return make_result(std::move(out), {x, gamma, beta},
                     [normalized = std::move(normalized), inv_std = std::move(inv_std), rows, cols](Node& self) {
    Node& nx = input(self, 0);
    Node& ng = input(self, 1);
    Node& nb = input(self, 2);
    const double* gamma_v = ng.value.data();
    if (ng.requires_grad || nb.requires_grad) {
      double* dg = ng.requires_grad ? ng.grad_buffer().data() : nullptr;
      double* db = nb.requires_grad ? nb.grad_buffer().data() : nullptr;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          const double dy = self.grad.at(r, c);
          if (dg) dg[c] += dy * normalized.at(r, c);
          if (db) db[c] += dy;
        }
      }
    }
    if (!nx.requires_grad) return;
    Tensor& dx = nx.grad_buffer();
    std::vector<double> dn(cols);
    const double inv_n = 1.0 / static_cast<double>(cols);
    for (std::size_t r = 0; r < rows; ++r) {
      double mean_dn = 0.0, mean_dn_n = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        dn[c] = self.grad.at(r, c) * gamma_v[c];
        mean_dn += dn[c];
        mean_dn_n += dn[c] * normalized.at(r, c);
      }
      mean_dn *= inv_n;
      mean_dn_n *= inv_n;
      for (std::size_t c = 0; c < cols; ++c) {
        dx.at(r, c) += inv_std[r] * (dn[c] - mean_dn - normalized.at(r, c) * mean_dn_n);
      }
    }
  });
}

Var dropout(const Var& x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probability must be in [0, 1)");
  if (p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor mask(x.shape());
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() < p ? 0.0 : keep_scale;
    out[i] *= mask[i];
  }
  return make_result(std::move(out), {x}, [mask = std::move(mask)](Node& self) {
    Tensor& g = input(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

Var gather_rows(const Var& table, std::span<const std::int64_t> index) {
  const Tensor& tv = table.value();
  require_matrix(tv, "gather_rows");
  const std::size_t cols = tv.cols();
  Tensor out(Shape{index.size(), cols});
  for (std::size_t i = 0; i < index.size(); ++i) {
    const std::int64_t src = index[i];
    if (src < 0) continue;
    if (static_cast<std::size_t>(src) >= tv.rows()) throw DimensionError("gather_rows: index out of range");
    std::copy_n(tv.data() + static_cast<std::size_t>(src) * cols, cols, out.data() + i * cols);
  }
  std::vector<std::int64_t> idx(index.begin(), index.end());
  return make_result(std::move(out), {table}, [idx = std::move(idx), cols](Node& self) {
    Tensor& g = input(self, 0).grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0) continue;
      double* dst = g.data() + static_cast<std::size_t>(idx[i]) * cols;
      const double* src = self.grad.data() + i * cols;
      for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows of nothing");
  const std::size_t cols = parts.front().value().cols();
  std::size_t rows = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.value().cols() != cols) throw DimensionError("concat_rows: width mismatch");
    offsets.push_back(rows);
    rows += p.value().size() / cols;
  }
  Tensor out(Shape{rows, cols});
  for (std::size_t i = 0; i < parts.size(); ++i) {
    std::copy_n(parts[i].value().data(), parts[i].value().size(), out.data() + offsets[i] * cols);
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return make_result(std::move(out), std::move(inputs), [offsets = std::move(offsets), cols](Node& self) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      Node& in = *self.inputs[i];
      if (!in.requires_grad) continue;
      Tensor& g = in.grad_buffer();
      const double* src = self.grad.data() + offsets[i] * cols;
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += src[k];
    }
  });
}

Var segment_pool(const Var& x, std::span<const Segment> segments, PoolMode mode) {
  const Tensor& xv = x.value();
  const std::size_t cols = xv.cols();
  const std::size_t total_rows = xv.size() / std::max<std::size_t>(cols, 1);
  Tensor out(Shape{segments.size(), cols});
  std::vector<std::int64_t> argmax;
  if (mode == PoolMode::max) argmax.assign(segments.size() * cols, -1);
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const Segment seg = segments[s];
    if (seg.offset + seg.length > total_rows) throw DimensionError("segment_pool: segment out of range");
    if (seg.length == 0 || mode == PoolMode::zero) continue;
    double* o = out.data() + s * cols;
    if (mode == PoolMode::mean) {
      for (std::size_t r = seg.offset; r < seg.offset + seg.length; ++r) {
        for (std::size_t c = 0; c < cols; ++c) o[c] += xv.at(r, c);
      }
      for (std::size_t c = 0; c < cols; ++c) o[c] /= static_cast<double>(seg.length);
    } else {
      for (std::size_t c = 0; c < cols; ++c) {
        std::size_t best = seg.offset;
        for (std::size_t r = seg.offset + 1; r < seg.offset + seg.length; ++r) {
          if (xv.at(r, c) > xv.at(best, c)) best = r;
        }
        o[c] = xv.at(best, c);
        argmax[s * cols + c] = static_cast<std::int64_t>(best);
      }
    }
  }
  std::vector<Segment> segs(segments.begin(), segments.end());
  return make_result(std::move(out), {x},
                     [segs = std::move(segs), argmax = std::move(argmax), mode, cols](Node& self) {
    if (mode == PoolMode::zero) return;
    Tensor& g = input(self, 0).grad_buffer();
    for (std::size_t s = 0; s < segs.size(); ++s) {
      if (segs[s].length == 0) continue;
      const double* go = self.grad.data() + s * cols;
      if (mode == PoolMode::mean) {
        const double inv = 1.0 / static_cast<double>(segs[s].length);
        for (std::size_t r = segs[s].offset; r < segs[s].offset + segs[s].length; ++r) {
          for (std::size_t c = 0; c < cols; ++c) g.at(r, c) += go[c] * inv;
        }
      } else {
        for (std::size_t c = 0; c < cols; ++c) g.at(static_cast<std::size_t>(argmax[s * cols + c]), c) += go[c];
      }
    }
  });
}

Var l2_normalize_rows(const Var& x, double eps) {
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor out = xv;
  std::vector<double> norms(rows);
  std::vector<std::uint8_t> floored(rows, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double n = l2_norm(xv.row(r));
    if (n < eps) {
      floored[r] = 1;
      g_zero_norm_events.fetch_add(1, std::memory_order_relaxed);
    }
    norms[r] = std::max(n, eps);
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) /= norms[r];
  }
  return make_result(std::move(out), {x},
                     [norms = std::move(norms), floored = std::move(floored), rows, cols](Node& self) {
    Tensor& g = input(self, 0).grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * cols;
      const double* dy = self.grad.data() + r * cols;
      double* dx = g.data() + r * cols;
      if (floored[r]) {
        for (std::size_t c = 0; c < cols; ++c) dx[c] += dy[c] / norms[r];
        continue;
      }
      double inner = 0.0;
      for (std::size_t c = 0; c < cols; ++c) inner += y[c] * dy[c];
      for (std::size_t c = 0; c < cols; ++c) dx[c] += (dy[c] - y[c] * inner) / norms[r];
    }
  });
}

Var sum_all(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return make_result(Tensor::scalar(s), {x}, [](Node& self) {
    Tensor& g = input(self, 0).grad_buffer();
    for (auto& v : g.values()) v += self.grad[0];
  });
}

std::uint64_t zero_norm_events() noexcept { return g_zero_norm_events.load(std::memory_order_relaxed); }

}  // namespace mmt::num
