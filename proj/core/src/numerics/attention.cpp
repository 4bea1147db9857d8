// SPDX-License-Identifier: Apache-2.0
#include "mmt/numerics/attention.hpp"

#include <cmath>
#include <limits>

#include "mmt/errors.hpp"

namespace mmt::num {

void AttentionConfig::validate() const {
  if (num_heads == 0 || model_dim == 0 || model_dim % num_heads != 0) {
    throw ConfigError("num_heads (" + std::to_string(num_heads) + ") must divide model_dim (" +
                      std::to_string(model_dim) + ")");
  }
}

Var scaled_dot_product_attention(const Var& q, const Var& k, const Var& v, std::span<const std::uint8_t> mask,
                                 std::size_t num_heads, std::size_t block_len, const ForwardContext& ctx) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  if (!qv.same_shape(kv) || !qv.same_shape(vv) || qv.rank() != 2) {
    throw DimensionError("attention: q, k, v must share a rank-2 shape");
  }
  const std::size_t rows = qv.rows(), dim = qv.cols();
  if (block_len == 0 || rows % block_len != 0) throw DimensionError("attention: rows not a multiple of block_len");
  if (mask.size() != rows) throw DimensionError("attention: mask length must equal row count");
  if (num_heads == 0 || dim % num_heads != 0) throw ConfigError("attention: heads must divide model_dim");
  const std::size_t blocks = rows / block_len;
  const std::size_t hd = dim / num_heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const double p_drop = ctx.active_dropout();
  const double keep_scale = p_drop > 0.0 ? 1.0 / (1.0 - p_drop) : 1.0;

  // probs[b][h][i][j]: softmax weights; drop holds the inverted-dropout factor.
  const std::size_t ll = block_len * block_len;
  std::vector<double> probs(blocks * num_heads * ll, 0.0);
  std::vector<double> drop;
  if (p_drop > 0.0) drop.assign(probs.size(), 0.0);
  Tensor out(Shape{rows, dim});
  std::vector<std::size_t> valid;
  valid.reserve(block_len);

  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t base = b * block_len;
    valid.clear();
    for (std::size_t j = 0; j < block_len; ++j) {
      if (mask[base + j]) valid.push_back(j);
    }
    if (valid.empty()) throw ContractError("attention: every position of a block is masked");
    for (std::size_t h = 0; h < num_heads; ++h) {
      const std::size_t c0 = h * hd;
      double* pb = probs.data() + (b * num_heads + h) * ll;
      for (std::size_t i = 0; i < block_len; ++i) {
        const double* qi = qv.data() + (base + i) * dim + c0;
        double* prow = pb + i * block_len;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j : valid) {
          const double* kj = kv.data() + (base + j) * dim + c0;
          double s = 0.0;
          for (std::size_t c = 0; c < hd; ++c) s += qi[c] * kj[c];
          s *= inv_scale;
          prow[j] = s;
          mx = std::max(mx, s);
        }
        double total = 0.0;
        for (std::size_t j : valid) {
          prow[j] = std::exp(prow[j] - mx);
          total += prow[j];
        }
        for (std::size_t j : valid) prow[j] /= total;
        double* oi = out.data() + (base + i) * dim + c0;
        for (std::size_t j : valid) {
          double w = prow[j];
          if (p_drop > 0.0) {
            const double f = ctx.rng->uniform() < p_drop ? 0.0 : keep_scale;
            drop[(b * num_heads + h) * ll + i * block_len + j] = f;
            w *= f;
          }
          if (w == 0.0) continue;
          const double* vj = vv.data() + (base + j) * dim + c0;
          for (std::size_t c = 0; c < hd; ++c) oi[c] += w * vj[c];
        }
      }
    }
  }

  std::vector<std::uint8_t> mask_copy(mask.begin(), mask.end());
  return make_result(
      std::move(out), {q, k, v},
      [probs = std::move(probs), drop = std::move(drop), mask_copy = std::move(mask_copy), blocks, block_len,
       num_heads, hd, dim, inv_scale](Node& self) {
        Node& nq = *self.inputs[0];
        Node& nk = *self.inputs[1];
        Node& nv = *self.inputs[2];
        double* dq = nq.requires_grad ? nq.grad_buffer().data() : nullptr;
        double* dk = nk.requires_grad ? nk.grad_buffer().data() : nullptr;
        double* dv = nv.requires_grad ? nv.grad_buffer().data() : nullptr;
        const std::size_t ll = block_len * block_len;
        std::vector<double> dp(block_len);
        std::vector<std::size_t> valid;
        for (std::size_t b = 0; b < blocks; ++b) {
          const std::size_t base = b * block_len;
          valid.clear();
          for (std::size_t j = 0; j < block_len; ++j) {
            if (mask_copy[base + j]) valid.push_back(j);
          }
          for (std::size_t h = 0; h < num_heads; ++h) {
            const std::size_t c0 = h * hd;
            const std::size_t pbase = (b * num_heads + h) * ll;
            for (std::size_t i = 0; i < block_len; ++i) {
              const double* doi = self.grad.data() + (base + i) * dim + c0;
              const double* prow = probs.data() + pbase + i * block_len;
              // dP'_ij = dO_i . v_j ; dV_j += P'_ij dO_i
              double inner = 0.0;
              for (std::size_t j : valid) {
                const double f = drop.empty() ? 1.0 : drop[pbase + i * block_len + j];
                const double* vj = nv.value.data() + (base + j) * dim + c0;
                double g = 0.0;
                for (std::size_t c = 0; c < hd; ++c) g += doi[c] * vj[c];
                dp[j] = g * f;
                inner += dp[j] * prow[j];
                if (dv != nullptr) {
                  const double w = prow[j] * f;
                  if (w != 0.0) {
                    double* dvj = dv + (base + j) * dim + c0;
                    for (std::size_t c = 0; c < hd; ++c) dvj[c] += w * doi[c];
                  }
                }
              }
              const double* qi = nq.value.data() + (base + i) * dim + c0;
              for (std::size_t j : valid) {
                const double ds = prow[j] * (dp[j] - inner) * inv_scale;
                if (ds == 0.0) continue;
                const double* kj = nk.value.data() + (base + j) * dim + c0;
                if (dq != nullptr) {
                  double* dqi = dq + (base + i) * dim + c0;
                  for (std::size_t c = 0; c < hd; ++c) dqi[c] += ds * kj[c];
                }
                if (dk != nullptr) {
                  double* dkj = dk + (base + j) * dim + c0;
                  for (std::size_t c = 0; c < hd; ++c) dkj[c] += ds * qi[c];
                }
              }
            }
          }
        }
      });
}

LinearParams make_linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  Tensor w(Shape{in, out});
  for (auto& x : w.values()) x = rng.normal(0.0, 0.02);
  LinearParams p;
  p.weight = store.add(name + ".weight", std::move(w));
  p.bias = store.add(name + ".bias", Tensor(Shape{out}));
  return p;
}

AttentionParams make_attention(ParameterStore& store, const std::string& name, const AttentionConfig& cfg, Rng& rng) {
  cfg.validate();
  AttentionParams p;
  p.query = make_linear(store, name + ".query", cfg.model_dim, cfg.model_dim, rng);
  p.key = make_linear(store, name + ".key", cfg.model_dim, cfg.model_dim, rng);
  p.value = make_linear(store, name + ".value", cfg.model_dim, cfg.model_dim, rng);
  p.output = make_linear(store, name + ".output", cfg.model_dim, cfg.model_dim, rng);
  return p;
}

EncoderLayerParams make_encoder_layer(ParameterStore& store, const std::string& name, const AttentionConfig& cfg,
                                      std::size_t intermediate_dim, Rng& rng) {
  EncoderLayerParams p;
  p.attention = make_attention(store, name + ".attn", cfg, rng);
  p.norm1_gamma = store.add(name + ".norm1.gamma", Tensor(Shape{cfg.model_dim}, 1.0));
  p.norm1_beta = store.add(name + ".norm1.beta", Tensor(Shape{cfg.model_dim}));
  p.ffn_in = make_linear(store, name + ".ffn.in", cfg.model_dim, intermediate_dim, rng);
  p.ffn_out = make_linear(store, name + ".ffn.out", intermediate_dim, cfg.model_dim, rng);
  p.norm2_gamma = store.add(name + ".norm2.gamma", Tensor(Shape{cfg.model_dim}, 1.0));
  p.norm2_beta = store.add(name + ".norm2.beta", Tensor(Shape{cfg.model_dim}));
  return p;
}

Var apply(const LinearParams& p, const Var& x) { return linear(x, p.weight, p.bias); }

Var multi_head_self_attention(const Var& seq, std::span<const std::uint8_t> mask, const AttentionConfig& cfg,
                              const AttentionParams& params, std::size_t block_len, const ForwardContext& ctx) {
  cfg.validate();
  if (seq.cols() != cfg.model_dim) throw DimensionError("attention input width does not match model_dim");
  const Var q = apply(params.query, seq);
  const Var k = apply(params.key, seq);
  const Var v = apply(params.value, seq);
  const Var attended = scaled_dot_product_attention(q, k, v, mask, cfg.num_heads, block_len, ctx);
  return apply(params.output, attended);
}

TransformerEncoder::TransformerEncoder(ParameterStore& store, const std::string& name, const AttentionConfig& cfg,
                                       std::size_t layers, std::size_t intermediate_dim, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  for (std::size_t l = 0; l < layers; ++l) {
    layers_.push_back(make_encoder_layer(store, name + ".layer" + std::to_string(l), cfg_, intermediate_dim, rng));
  }
}

Var TransformerEncoder::forward(const Var& seq, std::span<const std::uint8_t> mask, std::size_t block_len,
                                const ForwardContext& ctx) const {
  const double p = ctx.active_dropout();
  Var x = seq;
  for (const auto& layer : layers_) {
    Var a = multi_head_self_attention(x, mask, cfg_, layer.attention, block_len, ctx);
    if (p > 0.0) a = dropout(a, p, *ctx.rng);
    x = layer_norm(add(x, a), layer.norm1_gamma, layer.norm1_beta);
    Var f = apply(layer.ffn_out, gelu(apply(layer.ffn_in, x)));
    if (p > 0.0) f = dropout(f, p, *ctx.rng);
    x = layer_norm(add(x, f), layer.norm2_gamma, layer.norm2_beta);
  }
  return x;
}

}  // namespace mmt::num
