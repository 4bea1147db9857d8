// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmt/numerics/autograd.hpp"
#include "mmt/numerics/tensor.hpp"

namespace mmt {

/// Psi_agg(v): one row per expert.
struct VideoRepresentation {
  num::Tensor psi;                    // [N, d_model]
  std::vector<std::uint8_t> present;  // [N]
};

struct CaptionRepresentation {
  num::Tensor h;                // [d_h]
  num::Tensor phi;              // [N, d_model], unit rows
  std::vector<double> weights;  // [N], softmax output
};

struct SimilarityOptions {
  /// L2-normalise each psi row before the inner product.
  bool normalize_video = true;
  /// Re-weight w over the experts present in the video (NONE baseline).
  bool renormalize_missing = false;
};

/// s = sum_i w_i <phi_i, psi_i>, with the optional normalisation and
/// re-weighting. Straight scalar loops; the reference for the batched paths.
double similarity(const VideoRepresentation& video, const CaptionRepresentation& caption,
                  const SimilarityOptions& options = {});

/// Differentiable score matrix S[i, j] = s(v_i, c_j).
///
/// psi is [N * Bv, d] and phi [N * Bc, d], both expert-major (row n * B + b);
/// weights is [Bc, N]; present is [Bv * N] video-major. psi is used as given
/// (normalise upstream).
num::Var similarity_scores(const num::Var& psi, const num::Var& phi, const num::Var& weights,
                           std::span<const std::uint8_t> present, std::size_t num_experts, bool renormalize_missing);

struct LossConfig {
  double margin = 0.05;
  void validate() const;
};

/// (1/B) sum_i sum_{j != i} [max(0, s_ij - s_ii + m) + max(0, s_ji - s_ii + m)]
/// Rows are videos, columns captions; pair i sits on the diagonal.
double ranking_loss(const num::Tensor& scores, double margin);
/// Same loss with a subgradient of 0 at exact hinge equality.
num::Var ranking_loss(const num::Var& scores, double margin);

struct SimilarityMatrix {
  num::Tensor values;  // [Bv, Bc]
  std::vector<std::string> video_ids;
  std::vector<std::string> caption_ids;

  std::size_t videos() const { return video_ids.size(); }
  std::size_t captions() const { return caption_ids.size(); }
  void validate() const;
};

/// Precomputed video side. Rows hold [psi_1 ... psi_N] already normalised
/// when `normalized`.
///
/// Binary layout (little-endian), shared with CaptionStore:
///   "MMTS" | version u32 | kind u8 (1 video, 2 caption) | N u32 | d u32 |
///   count u32 | dtype u8 (2 = f64) | flags u8
///   (bit 0: psi normalised, bit 1: weights renormalised over present experts)
///   then `count` records: id (u32 length + UTF-8 bytes) followed by
///   video:   N presence bytes, N*d psi values
///   caption: N weights, N*d phi values
struct VideoStore {
  std::size_t experts = 0;
  std::size_t dim = 0;
  bool normalized = true;
  bool renormalize_missing = false;
  std::vector<std::string> ids;
  num::Tensor psi;                    // [count, N * d]
  std::vector<std::uint8_t> present;  // [count * N]

  std::size_t size() const { return ids.size(); }
  static VideoStore build(std::span<const std::string> ids, std::span<const VideoRepresentation> reps,
                          const SimilarityOptions& options);
  void save(const std::filesystem::path& path) const;
  static VideoStore load(const std::filesystem::path& path);
};

struct CaptionStore {
  std::size_t experts = 0;
  std::size_t dim = 0;
  std::vector<std::string> ids;
  num::Tensor weights;  // [count, N]
  num::Tensor phi;      // [count, N * d]

  std::size_t size() const { return ids.size(); }
  static CaptionStore build(std::span<const std::string> ids, std::span<const CaptionRepresentation> reps);
  void save(const std::filesystem::path& path) const;
  static CaptionStore load(const std::filesystem::path& path);
};

/// Pairwise online scoring through similarity().
SimilarityMatrix similarity_matrix(std::span<const std::string> video_ids, std::span<const VideoRepresentation> videos,
                                   std::span<const std::string> caption_ids,
                                   std::span<const CaptionRepresentation> captions, const SimilarityOptions& options);
/// Offline scoring from stores: one GEMM of psi against w-scaled phi.
SimilarityMatrix similarity_matrix(const VideoStore& videos, const CaptionStore& captions);

struct ScoredItem {
  std::string id;
  std::size_t index = 0;
  double score = 0.0;
};

/// k best videos for one caption, descending score, lower index first on ties.
/// k is clamped to the store size.
std::vector<ScoredItem> top_k(const VideoStore& videos, const CaptionRepresentation& caption, std::size_t k);

}  // namespace mmt
