// SPDX-License-Identifier: Apache-2.0
#include "mmt/data/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "binary_io.hpp"
#include "json.hpp"
#include "mmt/config.hpp"
#include "mmt/errors.hpp"
#include "mmt/numerics/random.hpp"

namespace mmt::data {
namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr std::array<const char*, 48> kEventWords = {
    "run",   "jump",  "cook",  "swim",  "dance", "sing",  "drive", "climb", "throw", "catch", "kick",  "clap",
    "laugh", "read",  "write", "paint", "ride",  "walk",  "skate", "surf",  "fish",  "bake",  "type",  "wave",
    "sleep", "eat",   "drink", "dive",  "row",   "ski",   "knit",  "sew",   "box",   "golf",  "shoot", "pour",
    "chop",  "fold",  "wash",  "push",  "pull",  "lift",  "spin",  "roll",  "crawl", "slide", "bounce", "whistle"};

// Latest slot start s with s + kMaxOffset < t_max.
constexpr double kMaxOffset = 0.9;

std::size_t slot_count(double t_max) {
  return static_cast<std::size_t>(std::ceil(t_max - kMaxOffset));
}

struct Emit {
  double offset = 0.0;
  std::vector<float> values;
};

struct Event {
  std::size_t type = 0;
  std::size_t slot = 0;
  std::vector<std::vector<Emit>> emits;  // [expert][j]
};

struct PlannedVideo {
  std::string id;
  std::vector<Event> events;
  std::vector<bool> present;
  std::string caption;
  std::string twin;  // contrastive partner, if any
};

// Event words in temporal order joined by "before".
std::string caption_for(const std::vector<Event>& events) {
  std::vector<Event> timeline = events;
  std::sort(timeline.begin(), timeline.end(), [](const Event& a, const Event& b) { return a.slot < b.slot; });
  std::string text = event_word(timeline[0].type);
  for (std::size_t i = 1; i < timeline.size(); ++i) text += " before " + event_word(timeline[i].type);
  return text;
}

// Uniqueness key: the event set, ignoring order. Only twins share one.
std::string event_set_key(const std::vector<Event>& events) {
  std::vector<std::size_t> types;
  for (const auto& e : events) types.push_back(e.type);
  std::sort(types.begin(), types.end());
  std::string key;
  for (std::size_t t : types) key += std::to_string(t) + ",";
  return key;
}

std::vector<std::size_t> sample_distinct(num::Rng& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  rng.shuffle(std::span<std::size_t>(all));
  all.resize(k);
  return all;
}

}  // namespace

std::string event_word(std::size_t type) {
  if (type < kEventWords.size()) return kEventWords[type];
  return "event" + std::to_string(type);
}

void SyntheticSpec::validate() const {
  if (experts.empty()) throw ConfigError("synthetic spec: at least one expert is required");
  std::set<std::string> names;
  for (const auto& e : experts) {
    if (e.name.empty()) throw ConfigError("synthetic spec: expert name must not be empty");
    if (!names.insert(e.name).second) throw ConfigError("synthetic spec: duplicate expert name " + e.name);
    if (e.dim == 0) throw ConfigError("synthetic spec: expert dim must be >= 1");
    if (!(e.missing_probability >= 0.0 && e.missing_probability < 1.0)) {
      throw ConfigError("synthetic spec: missing_probability must lie in [0, 1)");
    }
  }
  if (train_videos + val_videos + test_videos == 0) throw ConfigError("synthetic spec: no videos requested");
  if (event_types == 0) throw ConfigError("synthetic spec: event_types must be >= 1");
  if (min_events == 0 || min_events > max_events) throw ConfigError("synthetic spec: need 1 <= min_events <= max_events");
  if (max_events > event_types) throw ConfigError("synthetic spec: max_events exceeds event_types");
  if (latent_dim == 0) throw ConfigError("synthetic spec: latent_dim must be >= 1");
  if (features_per_event == 0) throw ConfigError("synthetic spec: features_per_event must be >= 1");
  if (!(noise >= 0.0)) throw ConfigError("synthetic spec: noise must be >= 0");
  if (!(t_max > kMaxOffset)) throw ConfigError("synthetic spec: t_max too small");
  const std::size_t slots_needed = order_contrastive ? std::max<std::size_t>(max_events, 2) : max_events;
  if (slot_count(t_max) < slots_needed) {
    throw ConfigError("synthetic spec: t_max leaves fewer one-second slots than events per video");
  }
  if (max_features_per_expert < max_events * features_per_event) {
    throw ConfigError("synthetic spec: max_features_per_expert is below max_events * features_per_event");
  }
  if (order_contrastive) {
    if (event_types < 2) throw ConfigError("synthetic spec: order-contrastive pairs need at least 2 event types");
    if (!(contrastive_fraction > 0.0 && contrastive_fraction <= 1.0)) {
      throw ConfigError("synthetic spec: contrastive_fraction must lie in (0, 1]");
    }
  }
}

DatasetManifest generate_synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed, const fs::path& out_dir) {
  spec.validate();
  num::Rng rng(num::derive_seed(seed, 0x5e17));
  const std::size_t n_experts = spec.experts.size();
  const std::size_t n_slots = slot_count(spec.t_max);

  // Event prototypes and per-expert emission maps.
  std::vector<std::vector<double>> latent(spec.event_types, std::vector<double>(spec.latent_dim));
  for (auto& z : latent) {
    for (auto& x : z) x = rng.normal();
  }
  // emission[n][e] = P_n z_e
  std::vector<std::vector<std::vector<double>>> emission(n_experts);
  for (std::size_t n = 0; n < n_experts; ++n) {
    const std::size_t dim = spec.experts[n].dim;
    std::vector<double> proj(dim * spec.latent_dim);
    const double sd = 1.0 / std::sqrt(static_cast<double>(spec.latent_dim));
    for (auto& x : proj) x = rng.normal(0.0, sd);
    emission[n].assign(spec.event_types, std::vector<double>(dim, 0.0));
    for (std::size_t e = 0; e < spec.event_types; ++e) {
      for (std::size_t r = 0; r < dim; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < spec.latent_dim; ++c) acc += proj[r * spec.latent_dim + c] * latent[e][c];
        emission[n][e][r] = acc;
      }
    }
  }

  auto draw_emits = [&](std::size_t type) {
    std::vector<std::vector<Emit>> emits(n_experts);
    for (std::size_t n = 0; n < n_experts; ++n) {
      for (std::size_t j = 0; j < spec.features_per_event; ++j) {
        Emit emit;
        emit.offset = rng.uniform() * kMaxOffset;
        for (double base : emission[n][type]) {
          emit.values.push_back(static_cast<float>(base + spec.noise * rng.normal()));
        }
        emits[n].push_back(std::move(emit));
      }
    }
    return emits;
  };
  auto draw_presence = [&]() {
    std::vector<bool> present(n_experts, true);
    for (std::size_t n = 0; n < n_experts; ++n) {
      if (spec.experts[n].missing_probability > 0.0) present[n] = rng.uniform() >= spec.experts[n].missing_probability;
    }
    return present;
  };

  // Plan videos split by split. Event sets are unique within a split, so even an
  // order-blind caption encoder can tell apart every pair that is not a twin.
  const std::array<std::size_t, 3> split_sizes{spec.train_videos, spec.val_videos, spec.test_videos};
  std::array<std::vector<PlannedVideo>, 3> planned;
  std::size_t next_id = 0;
  auto make_id = [&next_id]() {
    char buf[32];
    std::snprintf(buf, sizeof buf, "v%05zu", next_id++);
    return std::string(buf);
  };
  constexpr std::size_t kMaxAttempts = 10000;
  for (std::size_t s = 0; s < 3; ++s) {
    std::set<std::string> used;
    const std::size_t total = split_sizes[s];
    const std::size_t sets =
        spec.order_contrastive
            ? static_cast<std::size_t>(std::floor(static_cast<double>(total) * spec.contrastive_fraction / 2.0))
            : 0;
    for (std::size_t k = 0; k < sets; ++k) {
      for (std::size_t attempt = 0;; ++attempt) {
        if (attempt == kMaxAttempts) {
          throw ConfigError("synthetic spec: cannot draw " + std::to_string(sets) +
                            " distinct contrastive pairs for split " + to_string(static_cast<Split>(s)) +
                            "; raise event_types");
        }
        auto types = sample_distinct(rng, spec.event_types, 2);
        auto slots = sample_distinct(rng, n_slots, 2);
        std::vector<Event> first{{types[0], slots[0], {}}, {types[1], slots[1], {}}};
        std::vector<Event> second{{types[0], slots[1], {}}, {types[1], slots[0], {}}};
        if (!used.insert(event_set_key(first)).second) continue;
        std::string ca = caption_for(first), cb = caption_for(second);
        for (std::size_t i = 0; i < 2; ++i) {
          first[i].emits = draw_emits(types[i]);
          second[i].emits = first[i].emits;
        }
        // Exchange in-slot offsets too, so the twin's timestamps are exactly swapped.
        for (std::size_t n = 0; n < n_experts; ++n) {
          for (std::size_t j = 0; j < spec.features_per_event; ++j) {
            std::swap(second[0].emits[n][j].offset, second[1].emits[n][j].offset);
          }
        }
        PlannedVideo a{make_id(), std::move(first), draw_presence(), ca, ""};
        PlannedVideo b{make_id(), std::move(second), a.present, cb, a.id};
        a.twin = b.id;
        planned[s].push_back(std::move(a));
        planned[s].push_back(std::move(b));
        break;
      }
    }
    while (planned[s].size() < total) {
      for (std::size_t attempt = 0;; ++attempt) {
        if (attempt == kMaxAttempts) {
          throw ConfigError("synthetic spec: cannot draw " + std::to_string(total) + " distinct captions for split " +
                            to_string(static_cast<Split>(s)) + "; raise event_types or max_events");
        }
        const std::size_t count = spec.min_events + rng.below(spec.max_events - spec.min_events + 1);
        auto types = sample_distinct(rng, spec.event_types, count);
        auto slots = sample_distinct(rng, n_slots, count);
        std::vector<Event> events;
        for (std::size_t i = 0; i < count; ++i) events.push_back({types[i], slots[i], {}});
        if (!used.insert(event_set_key(events)).second) continue;
        std::string caption = caption_for(events);
        for (auto& ev : events) ev.emits = draw_emits(ev.type);
        planned[s].push_back({make_id(), std::move(events), draw_presence(), std::move(caption), ""});
        break;
      }
    }
  }

  // Materialise feature files and the manifest.
  DatasetManifest m;
  for (const auto& e : spec.experts) m.experts.push_back({e.name, e.dim, e.temporal});
  m.t_max = spec.t_max;
  m.max_features_per_expert = spec.max_features_per_expert;
  fs::create_directories(out_dir / "features");
  ordered_json video_meta = ordered_json::object();
  for (std::size_t s = 0; s < 3; ++s) {
    for (const auto& pv : planned[s]) {
      VideoEntry entry;
      entry.id = pv.id;
      entry.duration = spec.t_max;
      for (std::size_t n = 0; n < n_experts; ++n) {
        if (!pv.present[n]) {
          entry.feature_paths.emplace_back(std::nullopt);
          continue;
        }
        struct Row {
          float t;
          const std::vector<float>* values;
        };
        std::vector<Row> rows;
        for (const auto& ev : pv.events) {
          for (const auto& emit : ev.emits[n]) {
            rows.push_back({static_cast<float>(static_cast<double>(ev.slot) + emit.offset), &emit.values});
          }
        }
        std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.t < b.t; });
        ExpertFeatureSequence seq;
        seq.expert = m.experts[n];
        seq.present = true;
        seq.features = num::Tensor(num::Shape{rows.size(), spec.experts[n].dim});
        for (std::size_t r = 0; r < rows.size(); ++r) {
          seq.timestamps.push_back(rows[r].t);
          for (std::size_t c = 0; c < spec.experts[n].dim; ++c) seq.features.at(r, c) = (*rows[r].values)[c];
        }
        const fs::path rel = fs::path("features") / (pv.id + "." + spec.experts[n].name + ".mmtf");
        write_expert_features(out_dir / rel, seq);
        entry.feature_paths.emplace_back(out_dir / rel);
      }
      m.videos.push_back(std::move(entry));
      m.captions.push_back({"c" + pv.id.substr(1), pv.id, pv.caption});
      m.splits[s].push_back(pv.id);
      if (!pv.twin.empty() && pv.twin > pv.id) m.contrastive_pairs.emplace_back(pv.id, pv.twin);

      ordered_json events = ordered_json::array();
      for (const auto& ev : pv.events) events.push_back({{"type", ev.type}, {"slot", ev.slot}});
      ordered_json meta = {{"events", events}};
      if (!pv.twin.empty()) meta["twin"] = pv.twin;
      video_meta[pv.id] = meta;
    }
  }

  ordered_json words = ordered_json::array();
  for (std::size_t e = 0; e < spec.event_types; ++e) words.push_back(event_word(e));
  ordered_json emissions = ordered_json::object();
  for (std::size_t n = 0; n < n_experts; ++n) emissions[spec.experts[n].name] = emission[n];
  ordered_json meta;
  meta["generator"] = "mmt-synthetic";
  meta["seed"] = seed;
  meta["spec"] = ordered_json::parse(synthetic_spec_to_json(spec));
  meta["event_words"] = words;
  meta["emissions"] = emissions;
  meta["videos"] = video_meta;
  m.metadata_json = meta.dump();

  const fs::path manifest_path = out_dir / "manifest.json";
  write_manifest(m, manifest_path);
  return load_manifest(manifest_path);
}

}  // namespace mmt::data
