// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mmt/numerics/autograd.hpp"
#include "mmt/numerics/ops.hpp"
#include "mmt/numerics/random.hpp"

namespace mmt::num {

struct AttentionConfig {
  std::size_t model_dim = 512;
  std::size_t num_heads = 4;

  std::size_t head_dim() const { return model_dim / num_heads; }
  /// Throws ConfigError unless num_heads divides model_dim.
  void validate() const;
};

/// Forward-pass mode shared by every stochastic site.
struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;

  double active_dropout() const { return training && rng != nullptr ? dropout : 0.0; }
};

/// Scaled dot-product attention over `rows / block_len` independent blocks.
///
/// q, k, v are [blocks * block_len, model_dim]; heads split the columns.
/// Keys with mask == 0 get a -inf score and are skipped. A block whose keys
/// are all masked is a ContractError. Dropout, when active, is applied to the
/// attention probabilities.
Var scaled_dot_product_attention(const Var& q, const Var& k, const Var& v, std::span<const std::uint8_t> mask,
                                 std::size_t num_heads, std::size_t block_len, const ForwardContext& ctx);

struct LinearParams {
  Var weight;  // [in, out]
  Var bias;    // [out]
};

struct AttentionParams {
  LinearParams query, key, value, output;
};

struct EncoderLayerParams {
  AttentionParams attention;
  Var norm1_gamma, norm1_beta;
  LinearParams ffn_in, ffn_out;
  Var norm2_gamma, norm2_beta;
};

/// normal(0, 0.02) weights, zero bias.
LinearParams make_linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng);
AttentionParams make_attention(ParameterStore& store, const std::string& name, const AttentionConfig& cfg, Rng& rng);
EncoderLayerParams make_encoder_layer(ParameterStore& store, const std::string& name, const AttentionConfig& cfg,
                                      std::size_t intermediate_dim, Rng& rng);

Var apply(const LinearParams& p, const Var& x);

/// Multi-head self-attention (projections + attention + output projection).
Var multi_head_self_attention(const Var& seq, std::span<const std::uint8_t> mask, const AttentionConfig& cfg,
                              const AttentionParams& params, std::size_t block_len, const ForwardContext& ctx);

/// Post-norm transformer encoder: per layer
/// x = LN(x + drop(MHSA(x))); x = LN(x + drop(W2 gelu(W1 x))).
class TransformerEncoder {
 public:
  TransformerEncoder() = default;
  TransformerEncoder(ParameterStore& store, const std::string& name, const AttentionConfig& cfg, std::size_t layers,
                     std::size_t intermediate_dim, Rng& rng);

  Var forward(const Var& seq, std::span<const std::uint8_t> mask, std::size_t block_len,
              const ForwardContext& ctx) const;

  std::size_t num_layers() const { return layers_.size(); }
  const AttentionConfig& config() const { return cfg_; }

 private:
  AttentionConfig cfg_;
  std::vector<EncoderLayerParams> layers_;
};

}  // namespace mmt::num
