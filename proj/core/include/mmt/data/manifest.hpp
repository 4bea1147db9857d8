// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mmt/data/expert_features.hpp"
#include "mmt/data/tokenizer.hpp"

namespace mmt::data {

enum class Split { train = 0, val = 1, test = 2 };

std::string to_string(Split split);
Split parse_split(std::string_view name);

struct VideoEntry {
  std::string id;
  double duration = 0.0;
  /// One entry per expert in manifest order; nullopt marks a missing expert.
  std::vector<std::optional<std::filesystem::path>> feature_paths;
};

struct CaptionEntry {
  std::string id;
  std::string video_id;
  std::string text;
};

/// Parsed and validated dataset description.
///
/// JSON layout (paths relative to the manifest's directory):
/// {
///   "experts":  [{"name": "motion", "native_dim": 8, "temporal": true}, ...],
///   "t_max": 10.0,
///   "max_features_per_expert": 30,
///   "videos":   [{"id": "v0", "duration": 9.5,
///                 "features": {"motion": "features/v0.motion.mmtf", "audio": null}}],
///   "captions": [{"id": "c0", "video_id": "v0", "text": "..."}],
///   "splits":   {"train": ["v0"], "val": [], "test": ["v1"]},
///   "contrastive_pairs": [["v2", "v3"]],   // optional
///   "metadata": {...}                      // optional, kept verbatim
/// }
/// A missing or null feature entry means the expert is absent for that video.
struct DatasetManifest {
  std::filesystem::path source;
  std::vector<ExpertSpec> experts;
  double t_max = 0.0;
  std::size_t max_features_per_expert = 30;
  std::vector<VideoEntry> videos;
  std::vector<CaptionEntry> captions;
  std::array<std::vector<std::string>, 3> splits;  // indexed by Split
  std::vector<std::pair<std::string, std::string>> contrastive_pairs;
  std::string metadata_json = "{}";
  /// Built from the training split's captions.
  Vocabulary vocabulary;

  const std::vector<std::string>& split(Split s) const { return splits[static_cast<std::size_t>(s)]; }
  std::optional<std::size_t> video_index(std::string_view id) const;
};

/// Loads and eagerly validates a manifest: duplicate expert names
/// (DuplicateNameError), captions or splits referencing unknown videos
/// (DanglingReferenceError), absent feature files (MissingFileError naming
/// the path), overlapping splits (ValidationError).
DatasetManifest load_manifest(const std::filesystem::path& path);
DatasetManifest parse_manifest(const std::string& json_text, const std::filesystem::path& base_dir);

/// Serialises with paths relative to `path`'s directory.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

struct VideoRecord {
  std::string video_id;
  double duration = 0.0;
  std::vector<ExpertFeatureSequence> experts;  // exactly one per ExpertSpec
};

struct CaptionRecord {
  std::string caption_id;
  std::string video_id;
  std::string text;
  std::vector<std::int32_t> tokens;
};

struct LoadOptions {
  TokenizerOptions tokenizer;
  /// Timestamps at or beyond t_max are rejected unless clamped.
  bool clamp_timestamps = false;
  /// Overrides the manifest's cap when set.
  std::optional<std::size_t> max_features_per_expert;
};

struct Pair {
  std::size_t video = 0;
  std::size_t caption = 0;
};

/// Manifest plus every feature file and tokenised caption, in memory.
struct Dataset {
  DatasetManifest manifest;
  Vocabulary vocabulary;
  std::vector<VideoRecord> videos;
  std::vector<CaptionRecord> captions;
  std::array<std::vector<std::size_t>, 3> split_videos;

  /// Every caption of every video in the split.
  std::vector<Pair> training_pairs(Split split) const;
  /// First caption of each video in the split, in split order.
  std::vector<Pair> evaluation_pairs(Split split) const;
  std::optional<std::size_t> caption_index(std::string_view id) const;
};

/// Reads all features. Captions are tokenised with `vocabulary` (normally the
/// manifest's own, or the one stored in a checkpoint).
Dataset load_dataset(const DatasetManifest& manifest, const LoadOptions& options, const Vocabulary& vocabulary);
Dataset load_dataset(const DatasetManifest& manifest, const LoadOptions& options);

}  // namespace mmt::data
