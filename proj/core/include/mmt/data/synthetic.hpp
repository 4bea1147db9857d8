// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmt/data/manifest.hpp"

namespace mmt::data {

struct SyntheticExpert {
  std::string name;
  std::size_t dim = 8;
  bool temporal = true;
  /// Probability that a video lacks this expert entirely.
  double missing_probability = 0.0;
};

/// Synthetic paired data with known ground truth.
///
/// Every video is a handful of latent events placed in distinct whole-second
/// slots. An event of type e emits, for expert n, P_n z_e + noise at a
/// timestamp inside its slot; P_n is a per-expert random projection and z_e a
/// per-type latent vector. The caption names the events in temporal order
/// joined by "before", so two videos with the same events in swapped slots
/// get captions with the same words in a different order.
struct SyntheticSpec {
  std::size_t train_videos = 32;
  std::size_t val_videos = 8;
  std::size_t test_videos = 8;
  std::vector<SyntheticExpert> experts = {{"motion", 8, true, 0.0}, {"audio", 8, true, 0.0}};
  std::size_t event_types = 12;
  std::size_t min_events = 2;
  std::size_t max_events = 3;
  std::size_t latent_dim = 16;
  std::size_t features_per_event = 1;
  double noise = 0.05;
  double t_max = 10.0;
  std::size_t max_features_per_expert = 30;
  /// Emit order-contrastive video pairs: identical per-event features with
  /// the two events' timestamps swapped.
  bool order_contrastive = false;
  /// Share of each split made of contrastive pairs when enabled.
  double contrastive_fraction = 1.0;

  /// ConfigError on inconsistent settings.
  void validate() const;
};

/// Built-in names for the first event types; later ones are "event<k>".
std::string event_word(std::size_t type);

/// Writes `manifest.json` plus one feature file per (video, present expert)
/// under out_dir and returns the loaded manifest. Same spec and seed give
/// byte-identical files. The manifest metadata records, per video, the event
/// types and slots, the event words, and each expert's noiseless emission per
/// event type, which is enough to recover the caption of every video by a
/// nearest-neighbour search in event space.
DatasetManifest generate_synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed,
                                           const std::filesystem::path& out_dir);

}  // namespace mmt::data
