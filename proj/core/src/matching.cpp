// SPDX-License-Identifier: Apache-2.0
#include "mmt/matching.hpp"

#include <algorithm>
#include <cmath>

#include "binary_io.hpp"
#include "mmt/errors.hpp"
#include "mmt/numerics/gemm.hpp"
#include "mmt/numerics/ops.hpp"

namespace mmt {
namespace fs = std::filesystem;
using num::Node;
using num::Shape;
using num::Tensor;
using num::Var;

double similarity(const VideoRepresentation& video, const CaptionRepresentation& caption,
                  const SimilarityOptions& options) {
  const std::size_t n_experts = caption.weights.size();
  if (video.psi.rows() != n_experts || caption.phi.rows() != n_experts) {
    throw DimensionError("similarity: video has " + std::to_string(video.psi.rows()) + " experts, caption " +
                         std::to_string(caption.phi.rows()) + " embeddings and " + std::to_string(n_experts) +
                         " weights");
  }
  if (video.psi.cols() != caption.phi.cols()) throw DimensionError("similarity: embedding width mismatch");
  if (options.renormalize_missing && video.present.size() != n_experts) {
    throw DimensionError("similarity: presence flags missing");
  }
  double numerator = 0.0, denominator = 0.0;
  for (std::size_t n = 0; n < n_experts; ++n) {
    const double p = options.renormalize_missing ? (video.present[n] ? 1.0 : 0.0) : 1.0;
    const double w = caption.weights[n] * p;
    double d = num::dot(video.psi.row(n), caption.phi.row(n));
    if (options.normalize_video) d /= std::max(num::l2_norm(video.psi.row(n)), 1e-12);
    numerator += w * d;
    denominator += w;
  }
  if (!options.renormalize_missing) return numerator;
  return denominator > 0.0 ? numerator / denominator : 0.0;
}

Var similarity_scores(const Var& psi, const Var& phi, const Var& weights, std::span<const std::uint8_t> present,
                      std::size_t num_experts, bool renormalize_missing) {
  const std::size_t n_experts = num_experts;
  if (n_experts == 0) throw DimensionError("similarity_scores: zero experts");
  const Tensor& pv = psi.value();
  const Tensor& fv = phi.value();
  const Tensor& wv = weights.value();
  if (pv.rows() % n_experts != 0 || fv.rows() % n_experts != 0) {
    throw DimensionError("similarity_scores: row count not a multiple of the expert count");
  }
  const std::size_t bv = pv.rows() / n_experts;
  const std::size_t bc = fv.rows() / n_experts;
  const std::size_t d = pv.cols();
  if (fv.cols() != d) throw DimensionError("similarity_scores: embedding width mismatch");
  if (wv.rows() != bc || wv.cols() != n_experts) throw DimensionError("similarity_scores: weights must be [Bc, N]");
  if (renormalize_missing && present.size() != bv * n_experts) {
    throw DimensionError("similarity_scores: presence must be [Bv * N]");
  }

  // dots[n] = Psi_n Phi_n^T
  auto dots = std::make_shared<std::vector<Tensor>>();
  for (std::size_t n = 0; n < n_experts; ++n) {
    Tensor dn(Shape{bv, bc});
    num::gemm_nt(pv.data() + n * bv * d, fv.data() + n * bc * d, dn.data(), bv, d, bc, false);
    dots->push_back(std::move(dn));
  }
  auto p_at = [present, renormalize_missing, n_experts](std::size_t i, std::size_t n) {
    return renormalize_missing ? (present[i * n_experts + n] ? 1.0 : 0.0) : 1.0;
  };
  Tensor s(Shape{bv, bc});
  auto z = std::make_shared<Tensor>(Shape{bv, bc});
  for (std::size_t i = 0; i < bv; ++i) {
    for (std::size_t j = 0; j < bc; ++j) {
      double num = 0.0, den = 0.0;
      for (std::size_t n = 0; n < n_experts; ++n) {
        const double w = wv.at(j, n) * p_at(i, n);
        num += w * (*dots)[n].at(i, j);
        den += w;
      }
      z->at(i, j) = den;
      s.at(i, j) = renormalize_missing ? (den > 0.0 ? num / den : 0.0) : num;
    }
  }
  std::vector<std::uint8_t> pres(present.begin(), present.end());
  return num::make_result(std::move(s), {psi, phi, weights}, [=](Node& self) {
    Node& psi_n = *self.inputs[0];
    Node& phi_n = *self.inputs[1];
    Node& w_n = *self.inputs[2];
    const Tensor& ps = psi_n.value;
    const Tensor& ph = phi_n.value;
    const Tensor& w = w_n.value;
    auto p = [&](std::size_t i, std::size_t n) {
      return renormalize_missing ? (pres[i * n_experts + n] ? 1.0 : 0.0) : 1.0;
    };
    Tensor dpsi(ps.shape()), dphi(ph.shape()), dw(w.shape());
    Tensor dd(Shape{bv, bc});
    for (std::size_t n = 0; n < n_experts; ++n) {
      for (std::size_t i = 0; i < bv; ++i) {
        for (std::size_t j = 0; j < bc; ++j) {
          const double g = self.grad.at(i, j);
          const double pin = p(i, n);
          if (renormalize_missing) {
            const double zz = z->at(i, j);
            if (zz > 0.0) {
              dd.at(i, j) = g * w.at(j, n) * pin / zz;
              dw.at(j, n) += g * pin * ((*dots)[n].at(i, j) - self.value.at(i, j)) / zz;
            } else {
              dd.at(i, j) = 0.0;
            }
          } else {
            dd.at(i, j) = g * w.at(j, n);
            dw.at(j, n) += g * (*dots)[n].at(i, j);
          }
        }
      }
      num::gemm(dd.data(), ph.data() + n * bc * d, dpsi.data() + n * bv * d, bv, bc, d, false);
      num::gemm_tn(dd.data(), ps.data() + n * bv * d, dphi.data() + n * bc * d, bv, bc, d, false);
    }
    num::accumulate_grad(psi_n, dpsi);
    num::accumulate_grad(phi_n, dphi);
    num::accumulate_grad(w_n, dw);
  });
}

void LossConfig::validate() const {
  if (!(margin >= 0.0) || !std::isfinite(margin)) throw ConfigError("margin must be finite and >= 0");
}

namespace {

void require_square(const Tensor& s) {
  if (s.rank() != 2 || s.rows() != s.cols() || s.rows() == 0) {
    throw DimensionError("ranking_loss needs a non-empty square matrix, got " + num::shape_string(s.shape()));
  }
}

}  // namespace

double ranking_loss(const Tensor& s, double margin) {
  require_square(s);
  const std::size_t b = s.rows();
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double diag = s.at(i, i);
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) continue;
      total += std::max(0.0, s.at(i, j) - diag + margin);
      total += std::max(0.0, s.at(j, i) - diag + margin);
    }
  }
  return total / static_cast<double>(b);
}

Var ranking_loss(const Var& scores, double margin) {
  const Tensor& s = scores.value();
  const double loss = ranking_loss(s, margin);
  return num::make_result(Tensor::scalar(loss), {scores}, [margin](Node& self) {
    Node& in = *self.inputs[0];
    const Tensor& sv = in.value;
    const std::size_t b = sv.rows();
    const double g = self.grad[0] / static_cast<double>(b);
    Tensor ds(sv.shape());
    for (std::size_t i = 0; i < b; ++i) {
      const double diag = sv.at(i, i);
      for (std::size_t j = 0; j < b; ++j) {
        if (j == i) continue;
        if (sv.at(i, j) - diag + margin > 0.0) {
          ds.at(i, j) += g;
          ds.at(i, i) -= g;
        }
        if (sv.at(j, i) - diag + margin > 0.0) {
          ds.at(j, i) += g;
          ds.at(i, i) -= g;
        }
      }
    }
    num::accumulate_grad(in, ds);
  });
}

void SimilarityMatrix::validate() const {
  if (values.rank() != 2 || values.rows() != video_ids.size() || values.cols() != caption_ids.size()) {
    throw DimensionError("similarity matrix shape " + num::shape_string(values.shape()) + " does not match " +
                         std::to_string(video_ids.size()) + " x " + std::to_string(caption_ids.size()) + " ids");
  }
  if (!values.all_finite()) throw ValidationError("similarity matrix has non-finite entries");
}

VideoStore VideoStore::build(std::span<const std::string> ids, std::span<const VideoRepresentation> reps,
                             const SimilarityOptions& options) {
  if (ids.size() != reps.size()) throw DimensionError("VideoStore::build: ids and representations differ in count");
  VideoStore st;
  st.normalized = options.normalize_video;
  st.renormalize_missing = options.renormalize_missing;
  if (reps.empty()) return st;
  st.experts = reps[0].psi.rows();
  st.dim = reps[0].psi.cols();
  st.psi = Tensor(Shape{reps.size(), st.experts * st.dim});
  for (std::size_t v = 0; v < reps.size(); ++v) {
    const auto& r = reps[v];
    if (r.psi.rows() != st.experts || r.psi.cols() != st.dim) throw DimensionError("VideoStore::build: ragged psi");
    st.ids.push_back(ids[v]);
    for (std::size_t n = 0; n < st.experts; ++n) {
      auto src = r.psi.row(n);
      const double scale = options.normalize_video ? 1.0 / std::max(num::l2_norm(src), 1e-12) : 1.0;
      double* dst = st.psi.data() + v * st.experts * st.dim + n * st.dim;
      for (std::size_t c = 0; c < st.dim; ++c) dst[c] = src[c] * scale;
      st.present.push_back(n < r.present.size() ? r.present[n] : 1);
    }
  }
  return st;
}

CaptionStore CaptionStore::build(std::span<const std::string> ids, std::span<const CaptionRepresentation> reps) {
  if (ids.size() != reps.size()) throw DimensionError("CaptionStore::build: ids and representations differ in count");
  CaptionStore st;
  if (reps.empty()) return st;
  st.experts = reps[0].phi.rows();
  st.dim = reps[0].phi.cols();
  st.weights = Tensor(Shape{reps.size(), st.experts});
  st.phi = Tensor(Shape{reps.size(), st.experts * st.dim});
  for (std::size_t c = 0; c < reps.size(); ++c) {
    const auto& r = reps[c];
    if (r.phi.rows() != st.experts || r.phi.cols() != st.dim || r.weights.size() != st.experts) {
      throw DimensionError("CaptionStore::build: ragged representations");
    }
    st.ids.push_back(ids[c]);
    std::copy(r.weights.begin(), r.weights.end(), st.weights.row(c).begin());
    std::copy(r.phi.values().begin(), r.phi.values().end(), st.phi.row(c).begin());
  }
  return st;
}

namespace {

constexpr std::uint32_t kStoreVersion = 1;
constexpr std::uint8_t kStoreVideo = 1;
constexpr std::uint8_t kStoreCaption = 2;
constexpr std::uint8_t kStoreF64 = 2;

void write_header(io::ByteWriter& w, std::uint8_t kind, std::size_t n, std::size_t d, std::size_t count,
                  std::uint8_t flags) {
  w.raw("MMTS");
  w.u32(kStoreVersion);
  w.u8(kind);
  w.u32(static_cast<std::uint32_t>(n));
  w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(count));
  w.u8(kStoreF64);
  w.u8(flags);
}

struct Header {
  std::size_t n, d, count;
  std::uint8_t flags;
};

Header read_header(io::ByteReader& r, std::uint8_t expected_kind, const fs::path& path) {
  if (r.raw(4) != "MMTS") throw FormatError(path, "bad magic (expected MMTS)");
  if (const auto v = r.u32(); v != kStoreVersion) throw FormatError(path, "unsupported store version " + std::to_string(v));
  const std::uint8_t kind = r.u8();
  if (kind != expected_kind) {
    throw FormatError(path, std::string("store holds ") + (kind == kStoreVideo ? "videos" : "captions") +
                                ", expected " + (expected_kind == kStoreVideo ? "videos" : "captions"));
  }
  Header h{};
  h.n = r.u32();
  h.d = r.u32();
  h.count = r.u32();
  if (const auto dtype = r.u8(); dtype != kStoreF64) throw FormatError(path, "unsupported dtype " + std::to_string(dtype));
  h.flags = r.u8();
  return h;
}

}  // namespace

void VideoStore::save(const fs::path& path) const {
  io::ByteWriter w;
  write_header(w, kStoreVideo, experts, dim, ids.size(),
               static_cast<std::uint8_t>((normalized ? 1 : 0) | (renormalize_missing ? 2 : 0)));
  for (std::size_t v = 0; v < ids.size(); ++v) {
    w.str(ids[v]);
    for (std::size_t n = 0; n < experts; ++n) w.u8(present[v * experts + n]);
    for (double x : psi.row(v)) w.f64(x);
  }
  io::write_file(path, w.bytes());
}

VideoStore VideoStore::load(const fs::path& path) {
  const auto bytes = io::read_file(path);
  io::ByteReader r(bytes, path);
  const Header h = read_header(r, kStoreVideo, path);
  VideoStore st;
  st.experts = h.n;
  st.dim = h.d;
  st.normalized = (h.flags & 1) != 0;
  st.renormalize_missing = (h.flags & 2) != 0;
  st.psi = Tensor(Shape{h.count, h.n * h.d});
  for (std::size_t v = 0; v < h.count; ++v) {
    st.ids.push_back(r.str());
    for (std::size_t n = 0; n < h.n; ++n) st.present.push_back(r.u8());
    for (double& x : st.psi.row(v)) x = r.f64();
  }
  if (r.remaining() != 0) throw FormatError(path, "trailing bytes after last record");
  if (!st.psi.all_finite()) throw ValidationError(path.string() + ": non-finite psi values");
  return st;
}

void CaptionStore::save(const fs::path& path) const {
  io::ByteWriter w;
  write_header(w, kStoreCaption, experts, dim, ids.size(), 0);
  for (std::size_t c = 0; c < ids.size(); ++c) {
    w.str(ids[c]);
    for (double x : weights.row(c)) w.f64(x);
    for (double x : phi.row(c)) w.f64(x);
  }
  io::write_file(path, w.bytes());
}

CaptionStore CaptionStore::load(const fs::path& path) {
  const auto bytes = io::read_file(path);
  io::ByteReader r(bytes, path);
  const Header h = read_header(r, kStoreCaption, path);
  CaptionStore st;
  st.experts = h.n;
  st.dim = h.d;
  st.weights = Tensor(Shape{h.count, h.n});
  st.phi = Tensor(Shape{h.count, h.n * h.d});
  for (std::size_t c = 0; c < h.count; ++c) {
    st.ids.push_back(r.str());
    for (double& x : st.weights.row(c)) x = r.f64();
    for (double& x : st.phi.row(c)) x = r.f64();
  }
  if (r.remaining() != 0) throw FormatError(path, "trailing bytes after last record");
  if (!st.phi.all_finite() || !st.weights.all_finite()) throw ValidationError(path.string() + ": non-finite values");
  return st;
}

SimilarityMatrix similarity_matrix(std::span<const std::string> video_ids, std::span<const VideoRepresentation> videos,
                                   std::span<const std::string> caption_ids,
                                   std::span<const CaptionRepresentation> captions, const SimilarityOptions& options) {
  if (video_ids.size() != videos.size() || caption_ids.size() != captions.size()) {
    throw DimensionError("similarity_matrix: id and representation counts differ");
  }
  SimilarityMatrix m;
  m.video_ids.assign(video_ids.begin(), video_ids.end());
  m.caption_ids.assign(caption_ids.begin(), caption_ids.end());
  m.values = Tensor(Shape{videos.size(), captions.size()});
  for (std::size_t i = 0; i < videos.size(); ++i) {
    for (std::size_t j = 0; j < captions.size(); ++j) m.values.at(i, j) = similarity(videos[i], captions[j], options);
  }
  return m;
}

namespace {

// Caption rows scaled by their mixture weights: [count, N * d].
Tensor weighted_phi(const CaptionStore& captions) {
  const std::size_t n_experts = captions.experts, d = captions.dim;
  Tensor out(Shape{captions.size(), n_experts * d});
  for (std::size_t c = 0; c < captions.size(); ++c) {
    const double* src = captions.phi.data() + c * n_experts * d;
    double* dst = out.data() + c * n_experts * d;
    for (std::size_t n = 0; n < n_experts; ++n) {
      const double w = captions.weights.at(c, n);
      for (std::size_t k = 0; k < d; ++k) dst[n * d + k] = w * src[n * d + k];
    }
  }
  return out;
}

// Psi rows with absent experts zeroed, as the re-weighting requires.
Tensor masked_psi(const VideoStore& videos) {
  Tensor out = videos.psi;
  for (std::size_t v = 0; v < videos.size(); ++v) {
    for (std::size_t n = 0; n < videos.experts; ++n) {
      if (videos.present[v * videos.experts + n]) continue;
      double* row = out.data() + v * videos.experts * videos.dim + n * videos.dim;
      std::fill(row, row + videos.dim, 0.0);
    }
  }
  return out;
}

void check_compatible(const VideoStore& videos, const CaptionStore& captions) {
  if (videos.size() > 0 && captions.size() > 0 && (videos.experts != captions.experts || videos.dim != captions.dim)) {
    throw DimensionError("video store is " + std::to_string(videos.experts) + " x " + std::to_string(videos.dim) +
                         ", caption store " + std::to_string(captions.experts) + " x " + std::to_string(captions.dim));
  }
}

}  // namespace

SimilarityMatrix similarity_matrix(const VideoStore& videos, const CaptionStore& captions) {
  check_compatible(videos, captions);
  SimilarityMatrix m;
  m.video_ids = videos.ids;
  m.caption_ids = captions.ids;
  m.values = Tensor(Shape{videos.size(), captions.size()});
  if (videos.size() == 0 || captions.size() == 0) return m;
  const std::size_t n_experts = videos.experts, k = n_experts * videos.dim;
  const Tensor wphi = weighted_phi(captions);
  const Tensor psi = videos.renormalize_missing ? masked_psi(videos) : Tensor();
  const Tensor& lhs = videos.renormalize_missing ? psi : videos.psi;
  num::gemm_nt(lhs.data(), wphi.data(), m.values.data(), videos.size(), k, captions.size(), false);
  if (videos.renormalize_missing) {
    for (std::size_t i = 0; i < videos.size(); ++i) {
      for (std::size_t j = 0; j < captions.size(); ++j) {
        double z = 0.0;
        for (std::size_t n = 0; n < n_experts; ++n) {
          if (videos.present[i * n_experts + n]) z += captions.weights.at(j, n);
        }
        m.values.at(i, j) = z > 0.0 ? m.values.at(i, j) / z : 0.0;
      }
    }
  }
  return m;
}

std::vector<ScoredItem> top_k(const VideoStore& videos, const CaptionRepresentation& caption, std::size_t k) {
  if (videos.size() == 0) throw DataError("retrieval against an empty video store");
  CaptionStore one;
  one.experts = caption.phi.rows();
  one.dim = caption.phi.cols();
  one.ids = {"query"};
  one.weights = Tensor(Shape{1, one.experts}, caption.weights);
  one.phi = caption.phi.reshaped(Shape{1, one.experts * one.dim});
  const SimilarityMatrix s = similarity_matrix(videos, one);
  std::vector<ScoredItem> items;
  for (std::size_t v = 0; v < videos.size(); ++v) items.push_back({videos.ids[v], v, s.values.at(v, 0)});
  std::stable_sort(items.begin(), items.end(), [](const ScoredItem& a, const ScoredItem& b) { return a.score > b.score; });
  items.resize(std::min(k, items.size()));
  return items;
}

}  // namespace mmt
