// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmt/numerics/tensor.hpp"

namespace mmt::data {

/// A named source of precomputed per-video features.
struct ExpertSpec {
  std::string name;
  std::size_t native_dim = 1;
  /// false: the expert's features carry no usable timestamps.
  bool temporal = true;

  friend bool operator==(const ExpertSpec&, const ExpertSpec&) = default;
};

/// Timestamped features of one expert for one video.
struct ExpertFeatureSequence {
  ExpertSpec expert;
  std::vector<double> timestamps;  // seconds, nondecreasing
  num::Tensor features;            // [K, native_dim]
  bool present = false;

  std::size_t count() const noexcept { return timestamps.size(); }
  /// Keeps the earliest `cap` features.
  void truncate(std::size_t cap);
};

/// Binary feature file layout (little-endian):
///   "MMTF" | version u32 | native_dim u32 | K u32 | dtype u8 (1 = f32)
///   then K records of [timestamp f32, native_dim x f32].
inline constexpr std::uint32_t kFeatureFormatVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 1;

std::vector<std::uint8_t> encode_expert_features(const ExpertFeatureSequence& seq);
/// `origin` names the source in error messages.
ExpertFeatureSequence decode_expert_features(const std::vector<std::uint8_t>& bytes,
                                             const std::filesystem::path& origin);

void write_expert_features(const std::filesystem::path& path, const ExpertFeatureSequence& seq);
/// Throws FormatError on bad magic, dtype or truncation and ValidationError on
/// decreasing timestamps. K = 0 yields present = false.
ExpertFeatureSequence read_expert_features(const std::filesystem::path& path);

}  // namespace mmt::data
