// SPDX-License-Identifier: Apache-2.0
#include "mmt/caption_encoder.hpp"

#include <algorithm>

#include "mmt/data/expert_features.hpp"
#include "mmt/errors.hpp"

namespace mmt {
namespace fs = std::filesystem;
using num::Shape;
using num::Tensor;
using num::Var;

std::string to_string(CaptionEmbedderKind kind) {
  return kind == CaptionEmbedderKind::trainable_token ? "trainable_token" : "precomputed";
}

CaptionEmbedderKind parse_caption_embedder(std::string_view s) {
  if (s == "trainable_token") return CaptionEmbedderKind::trainable_token;
  if (s == "precomputed") return CaptionEmbedderKind::precomputed;
  throw ConfigError("caption embedder must be trainable_token or precomputed, got '" + std::string(s) + "'");
}

PrecomputedCaptionVectors PrecomputedCaptionVectors::load(const fs::path& dir, std::size_t dim) {
  if (!fs::is_directory(dir)) throw MissingFileError(dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".mmtf") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  PrecomputedCaptionVectors out;
  out.dim_ = dim;
  for (const auto& f : files) {
    auto seq = data::read_expert_features(f);
    if (seq.count() != 1) throw ValidationError(f.string() + ": expected exactly one caption vector");
    if (seq.features.cols() != dim) {
      throw DimensionError(f.string() + ": caption vector has dim " + std::to_string(seq.features.cols()) +
                           ", model expects " + std::to_string(dim));
    }
    auto row = seq.features.row(0);
    out.vectors_[f.stem().string()] = std::vector<double>(row.begin(), row.end());
  }
  return out;
}

void PrecomputedCaptionVectors::insert(const std::string& caption_id, std::vector<double> h) {
  if (dim_ == 0) dim_ = h.size();
  if (h.size() != dim_) throw DimensionError("precomputed caption vector dim mismatch for " + caption_id);
  vectors_[caption_id] = std::move(h);
}

const std::vector<double>& PrecomputedCaptionVectors::at(const std::string& caption_id) const {
  auto it = vectors_.find(caption_id);
  if (it == vectors_.end()) throw DataError("precomputed vector missing for caption " + caption_id);
  return it->second;
}

void write_precomputed_caption_vector(const fs::path& dir, const std::string& caption_id, std::span<const double> h) {
  data::ExpertFeatureSequence seq;
  seq.expert.native_dim = h.size();
  seq.present = true;
  seq.timestamps = {0.0};
  seq.features = Tensor(Shape{1, h.size()}, std::vector<double>(h.begin(), h.end()));
  data::write_expert_features(dir / (caption_id + ".mmtf"), seq);
}

void CaptionEncoderConfig::validate() const {
  if (embedding_dim == 0) throw ConfigError("caption encoder: embedding_dim must be >= 1");
  if (model_dim == 0) throw ConfigError("caption encoder: model_dim must be >= 1");
  if (num_experts == 0) throw ConfigError("caption encoder: num_experts must be >= 1");
  if (kind == CaptionEmbedderKind::trainable_token && vocab_size < 2) {
    throw ConfigError("caption encoder: vocabulary must hold at least the reserved tokens");
  }
  if (aggregator == num::PoolMode::zero) throw ConfigError("caption encoder: aggregator must be max or mean");
}

Var gated_embed(const Var& h, const GatedModuleParams& module) {
  Var y = num::apply(module.first, h);
  Var z = num::mul(y, num::sigmoid(num::apply(module.gate, y)));
  return num::l2_normalize_rows(z, 1e-12);
}

Var mixture_weights(const Var& h, const Var& head) { return num::softmax_rows(num::matmul(h, head)); }

CaptionEncoder::CaptionEncoder(num::ParameterStore& store, const std::string& prefix, CaptionEncoderConfig cfg,
                               num::Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  auto normal = [&](Shape shape) {
    Tensor t(std::move(shape));
    for (auto& x : t.values()) x = rng.normal(0.0, 0.02);
    return t;
  };
  if (cfg_.kind == CaptionEmbedderKind::trainable_token) {
    embedding_ = store.add(prefix + ".token_embedding", normal({cfg_.vocab_size, cfg_.embedding_dim}));
    if (cfg_.positions > 0) {
      position_ = store.add(prefix + ".position_embedding", normal({cfg_.positions, cfg_.embedding_dim}));
    }
  }
  for (std::size_t n = 0; n < cfg_.num_experts; ++n) {
    const std::string name = prefix + ".gated" + std::to_string(n);
    GatedModuleParams m;
    m.first = num::make_linear(store, name + ".first", cfg_.embedding_dim, cfg_.model_dim, rng);
    m.gate = num::make_linear(store, name + ".gate", cfg_.model_dim, cfg_.model_dim, rng);
    modules_.push_back(m);
  }
  mixture_ = store.add(prefix + ".mixture", normal({cfg_.embedding_dim, cfg_.num_experts}));
}

void CaptionEncoder::set_precomputed(PrecomputedCaptionVectors vectors) {
  if (vectors.size() > 0 && vectors.dim() != cfg_.embedding_dim) {
    throw DimensionError("precomputed caption vectors have dim " + std::to_string(vectors.dim()) + ", model expects " +
                         std::to_string(cfg_.embedding_dim));
  }
  precomputed_ = std::move(vectors);
}

Var CaptionEncoder::embed_tokens(std::span<const std::vector<std::int32_t>> tokens) const {
  if (cfg_.kind != CaptionEmbedderKind::trainable_token) throw ContractError("embed_tokens on a precomputed embedder");
  std::vector<std::int64_t> ids, pos;
  std::vector<num::Segment> segments;
  for (const auto& t : tokens) {
    if (t.empty()) throw ContractError("caption with no tokens");
    segments.push_back({ids.size(), t.size()});
    for (std::size_t i = 0; i < t.size(); ++i) pos.push_back(static_cast<std::int64_t>(std::min(i, cfg_.positions - 1)));
    for (std::int32_t id : t) {
      if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size) {
        throw DimensionError("token id " + std::to_string(id) + " outside vocabulary of " +
                             std::to_string(cfg_.vocab_size));
      }
      ids.push_back(id);
    }
  }
  Var rows = num::gather_rows(embedding_, ids);
  if (cfg_.positions > 0) rows = num::add(rows, num::gather_rows(position_, pos));
  return num::segment_pool(rows, segments, cfg_.aggregator);
}

Var CaptionEncoder::embed(std::span<const data::CaptionRecord* const> captions) const {
  if (cfg_.kind == CaptionEmbedderKind::trainable_token) {
    std::vector<std::vector<std::int32_t>> tokens;
    for (const auto* c : captions) tokens.push_back(c->tokens);
    return embed_tokens(tokens);
  }
  Tensor h(Shape{captions.size(), cfg_.embedding_dim});
  for (std::size_t b = 0; b < captions.size(); ++b) {
    const auto& v = precomputed_.at(captions[b]->caption_id);
    std::copy(v.begin(), v.end(), h.row(b).begin());
  }
  return Var(std::move(h));
}

CaptionBatchOutput CaptionEncoder::encode_from_h(const Var& h) const {
  CaptionBatchOutput out;
  out.h = h;
  out.batch = h.rows();
  out.experts = cfg_.num_experts;
  std::vector<Var> phis;
  for (const auto& m : modules_) phis.push_back(gated_embed(h, m));
  out.phi = num::concat_rows(phis);
  out.weights = mixture_weights(h, mixture_);
  return out;
}

CaptionBatchOutput CaptionEncoder::encode_batch(std::span<const data::CaptionRecord* const> captions) const {
  if (captions.empty()) throw ContractError("encode_batch of zero captions");
  return encode_from_h(embed(captions));
}

}  // namespace mmt
