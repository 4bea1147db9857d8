// SPDX-License-Identifier: Apache-2.0
#include "mmt/data/expert_features.hpp"

#include <cmath>

#include "binary_io.hpp"
#include "mmt/errors.hpp"

namespace mmt::data {

void ExpertFeatureSequence::truncate(std::size_t cap) {
  if (count() <= cap) return;
  const std::size_t d = features.cols();
  timestamps.resize(cap);
  std::vector<double> kept(features.data(), features.data() + cap * d);
  features = num::Tensor(num::Shape{cap, d}, std::move(kept));
  present = cap > 0;
}

std::vector<std::uint8_t> encode_expert_features(const ExpertFeatureSequence& seq) {
  const std::size_t k = seq.count();
  const std::size_t d = seq.expert.native_dim;
  if (k > 0 && (seq.features.rows() != k || seq.features.cols() != d)) {
    throw DimensionError("feature matrix " + num::shape_string(seq.features.shape()) + " does not match K=" +
                         std::to_string(k) + ", native_dim=" + std::to_string(d));
  }
  for (std::size_t i = 1; i < k; ++i) {
    if (seq.timestamps[i] < seq.timestamps[i - 1]) {
      throw ValidationError("refusing to write decreasing timestamps at record " + std::to_string(i));
    }
  }
  io::ByteWriter w;
  w.raw("MMTF");
  w.u32(kFeatureFormatVersion);
  w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(k));
  w.u8(kDtypeF32);
  for (std::size_t i = 0; i < k; ++i) {
    w.f32(static_cast<float>(seq.timestamps[i]));
    for (std::size_t c = 0; c < d; ++c) w.f32(static_cast<float>(seq.features.at(i, c)));
  }
  return std::move(w.bytes());
}

ExpertFeatureSequence decode_expert_features(const std::vector<std::uint8_t>& bytes,
                                             const std::filesystem::path& origin) {
  io::ByteReader r(bytes, origin);
  if (r.remaining() < 4 || r.raw(4) != "MMTF") throw FormatError(origin, "bad magic (expected MMTF)");
  const std::uint32_t version = r.u32();
  if (version != kFeatureFormatVersion) throw FormatError(origin, "unsupported format version " + std::to_string(version));
  const std::uint32_t dim = r.u32();
  const std::uint32_t k = r.u32();
  const std::uint8_t dtype = r.u8();
  if (dtype != kDtypeF32) throw FormatError(origin, "dtype mismatch: code " + std::to_string(dtype) + " (expected 1 = f32)");
  if (dim == 0) throw FormatError(origin, "native_dim must be >= 1");
  const std::size_t record = 4ULL * (1ULL + dim);
  if (r.remaining() < record * k) throw FormatError(origin, "truncated payload: " + std::to_string(k) + " records declared");
  if (r.remaining() > record * k) throw FormatError(origin, "trailing bytes after " + std::to_string(k) + " records");

  ExpertFeatureSequence seq;
  seq.expert.native_dim = dim;
  seq.features = num::Tensor(num::Shape{k, dim});
  seq.timestamps.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    seq.timestamps[i] = r.f32();
    if (!std::isfinite(seq.timestamps[i])) throw ValidationError(origin.string() + ": non-finite timestamp");
    if (i > 0 && seq.timestamps[i] < seq.timestamps[i - 1]) {
      throw ValidationError(origin.string() + ": timestamps decrease at record " + std::to_string(i));
    }
    for (std::size_t c = 0; c < dim; ++c) {
      const float v = r.f32();
      if (!std::isfinite(v)) throw ValidationError(origin.string() + ": non-finite feature value");
      seq.features.at(i, c) = v;
    }
  }
  seq.present = k > 0;
  return seq;
}

void write_expert_features(const std::filesystem::path& path, const ExpertFeatureSequence& seq) {
  io::write_file(path, encode_expert_features(seq));
}

ExpertFeatureSequence read_expert_features(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingFileError(path);
  return decode_expert_features(io::read_file(path), path);
}

}  // namespace mmt::data
