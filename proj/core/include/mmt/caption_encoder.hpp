// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mmt/data/manifest.hpp"
#include "mmt/numerics/attention.hpp"
#include "mmt/numerics/autograd.hpp"
#include "mmt/numerics/ops.hpp"

namespace mmt {

enum class CaptionEmbedderKind { trainable_token, precomputed };
std::string to_string(CaptionEmbedderKind kind);
CaptionEmbedderKind parse_caption_embedder(std::string_view s);

/// External h(c) vectors: one feature file per caption, `<caption_id>.mmtf`,
/// holding a single record (timestamp 0) of dimension d_h.
class PrecomputedCaptionVectors {
 public:
  PrecomputedCaptionVectors() = default;
  /// Reads every *.mmtf file of `dir`; all must have dimension `dim`.
  static PrecomputedCaptionVectors load(const std::filesystem::path& dir, std::size_t dim);
  void insert(const std::string& caption_id, std::vector<double> h);
  /// DataError when the caption has no stored vector.
  const std::vector<double>& at(const std::string& caption_id) const;
  bool contains(const std::string& caption_id) const { return vectors_.count(caption_id) != 0; }
  std::size_t size() const { return vectors_.size(); }
  std::size_t dim() const { return dim_; }

 private:
  std::size_t dim_ = 0;
  std::map<std::string, std::vector<double>> vectors_;
};

void write_precomputed_caption_vector(const std::filesystem::path& dir, const std::string& caption_id,
                                      std::span<const double> h);

struct CaptionEncoderConfig {
  CaptionEmbedderKind kind = CaptionEmbedderKind::trainable_token;
  std::size_t vocab_size = 2;
  std::size_t embedding_dim = 256;  // d_h
  num::PoolMode aggregator = num::PoolMode::max;
  std::size_t model_dim = 512;
  std::size_t num_experts = 1;
  /// Adds a learned embedding per token position before pooling, making h
  /// sensitive to word order. Positions past the table reuse its last row.
  std::size_t positions = 0;

  void validate() const;
};

struct GatedModuleParams {
  num::LinearParams first;   // d_h -> d_model
  num::LinearParams gate;    // d_model -> d_model
};

/// phi = z / ||z|| with z = y * sigmoid(W2 y + b2), y = W1 h + b1; row-wise.
num::Var gated_embed(const num::Var& h, const GatedModuleParams& module);
/// softmax(h A) per row; A is [d_h, N].
num::Var mixture_weights(const num::Var& h, const num::Var& head);

/// Batched caption representation.
struct CaptionBatchOutput {
  num::Var h;        // [B, d_h]
  num::Var phi;      // [N * B, d_model], expert-major (row n * B + b)
  num::Var weights;  // [B, N]
  std::size_t batch = 0;
  std::size_t experts = 0;
};

class CaptionEncoder {
 public:
  CaptionEncoder() = default;
  CaptionEncoder(num::ParameterStore& store, const std::string& prefix, CaptionEncoderConfig cfg, num::Rng& rng);

  const CaptionEncoderConfig& config() const { return cfg_; }
  void set_precomputed(PrecomputedCaptionVectors vectors);
  const PrecomputedCaptionVectors& precomputed() const { return precomputed_; }

  /// h(c) for a batch: [B, d_h].
  num::Var embed(std::span<const data::CaptionRecord* const> captions) const;
  /// Token-embedding path used by the trainable variant.
  num::Var embed_tokens(std::span<const std::vector<std::int32_t>> tokens) const;
  CaptionBatchOutput encode_batch(std::span<const data::CaptionRecord* const> captions) const;
  /// Full pipeline from an already computed h.
  CaptionBatchOutput encode_from_h(const num::Var& h) const;

  const GatedModuleParams& module(std::size_t expert) const { return modules_.at(expert); }
  const num::Var& mixture_head() const { return mixture_; }

 private:
  CaptionEncoderConfig cfg_;
  num::Var embedding_;  // [V, d_h]
  num::Var position_;   // [positions, d_h], empty when disabled
  std::vector<GatedModuleParams> modules_;
  num::Var mixture_;  // [d_h, N]
  PrecomputedCaptionVectors precomputed_;
};

}  // namespace mmt
