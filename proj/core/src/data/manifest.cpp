// SPDX-License-Identifier: Apache-2.0
#include "mmt/data/manifest.hpp"

#include <set>
#include <unordered_map>
#include <unordered_set>

#include "binary_io.hpp"
#include "json.hpp"
#include "mmt/errors.hpp"

namespace mmt::data {
namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ConfigError("unknown split '" + std::string(name) + "' (expected train, val or test)");
}

std::optional<std::size_t> DatasetManifest::video_index(std::string_view id) const {
  for (std::size_t i = 0; i < videos.size(); ++i) {
    if (videos[i].id == id) return i;
  }
  return std::nullopt;
}

namespace {

template <typename T>
T require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) throw ValidationError(where + ": missing key '" + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(where + ": bad value for '" + key + "': " + e.what());
  }
}

}  // namespace

DatasetManifest parse_manifest(const std::string& json_text, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ValidationError("manifest root must be an object");

  DatasetManifest m;
  m.t_max = require<double>(doc, "t_max", "manifest");
  if (!(m.t_max > 0.0)) throw ValidationError("manifest: t_max must be > 0");
  m.max_features_per_expert = require<std::size_t>(doc, "max_features_per_expert", "manifest");
  if (m.max_features_per_expert == 0) throw ValidationError("manifest: max_features_per_expert must be >= 1");

  std::unordered_set<std::string> expert_names;
  for (const auto& e : require<json>(doc, "experts", "manifest")) {
    ExpertSpec spec;
    spec.name = require<std::string>(e, "name", "expert");
    spec.native_dim = require<std::size_t>(e, "native_dim", "expert " + spec.name);
    spec.temporal = e.value("temporal", true);
    if (spec.native_dim == 0) throw ValidationError("expert " + spec.name + ": native_dim must be >= 1");
    if (!expert_names.insert(spec.name).second) throw DuplicateNameError("duplicate expert name: " + spec.name);
    m.experts.push_back(std::move(spec));
  }
  if (m.experts.empty()) throw ValidationError("manifest: at least one expert is required");

  std::unordered_set<std::string> video_ids;
  for (const auto& v : require<json>(doc, "videos", "manifest")) {
    VideoEntry entry;
    entry.id = require<std::string>(v, "id", "video");
    entry.duration = require<double>(v, "duration", "video " + entry.id);
    if (!(entry.duration > 0.0)) throw ValidationError("video " + entry.id + ": duration must be > 0");
    if (!video_ids.insert(entry.id).second) throw DuplicateNameError("duplicate video id: " + entry.id);
    const json features = v.value("features", json::object());
    if (!features.is_object()) throw ValidationError("video " + entry.id + ": 'features' must be an object");
    for (auto it = features.begin(); it != features.end(); ++it) {
      if (!expert_names.count(it.key())) {
        throw DanglingReferenceError("video " + entry.id + " lists features for unknown expert '" + it.key() + "'");
      }
    }
    for (const auto& spec : m.experts) {
      if (!features.contains(spec.name) || features.at(spec.name).is_null()) {
        entry.feature_paths.emplace_back(std::nullopt);
        continue;
      }
      fs::path p = features.at(spec.name).get<std::string>();
      if (p.is_relative()) p = base_dir / p;
      if (!fs::exists(p)) throw MissingFileError(p);
      entry.feature_paths.emplace_back(p);
    }
    m.videos.push_back(std::move(entry));
  }

  std::unordered_set<std::string> caption_ids;
  for (const auto& c : require<json>(doc, "captions", "manifest")) {
    CaptionEntry entry;
    entry.id = require<std::string>(c, "id", "caption");
    entry.video_id = require<std::string>(c, "video_id", "caption " + entry.id);
    entry.text = require<std::string>(c, "text", "caption " + entry.id);
    if (!caption_ids.insert(entry.id).second) throw DuplicateNameError("duplicate caption id: " + entry.id);
    if (!video_ids.count(entry.video_id)) {
      throw DanglingReferenceError("caption " + entry.id + " references unknown video '" + entry.video_id + "'");
    }
    m.captions.push_back(std::move(entry));
  }

  const json splits = require<json>(doc, "splits", "manifest");
  std::unordered_map<std::string, std::string> assigned;
  for (Split s : {Split::train, Split::val, Split::test}) {
    const std::string name = to_string(s);
    if (!splits.contains(name)) continue;
    for (const auto& idj : splits.at(name)) {
      const std::string id = idj.get<std::string>();
      if (!video_ids.count(id)) throw DanglingReferenceError("split " + name + " references unknown video '" + id + "'");
      auto [it, inserted] = assigned.emplace(id, name);
      if (!inserted) throw ValidationError("video " + id + " appears in splits " + it->second + " and " + name);
      m.splits[static_cast<std::size_t>(s)].push_back(id);
    }
  }
  for (auto it = splits.begin(); it != splits.end(); ++it) {
    if (it.key() != "train" && it.key() != "val" && it.key() != "test") {
      throw ValidationError("unknown split name '" + it.key() + "'");
    }
  }

  if (doc.contains("contrastive_pairs")) {
    for (const auto& pr : doc.at("contrastive_pairs")) {
      const auto a = pr.at(0).get<std::string>();
      const auto b = pr.at(1).get<std::string>();
      if (!video_ids.count(a) || !video_ids.count(b)) {
        throw DanglingReferenceError("contrastive pair references unknown video");
      }
      m.contrastive_pairs.emplace_back(a, b);
    }
  }
  if (doc.contains("metadata")) m.metadata_json = doc.at("metadata").dump();

  std::vector<std::string> train_texts;
  std::unordered_set<std::string> train_set(m.split(Split::train).begin(), m.split(Split::train).end());
  for (const auto& c : m.captions) {
    if (train_set.count(c.video_id)) train_texts.push_back(c.text);
  }
  m.vocabulary = Vocabulary::build(train_texts);
  return m;
}

DatasetManifest load_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw MissingFileError(path);
  DatasetManifest m = parse_manifest(io::read_text(path), path.parent_path());
  m.source = path;
  return m;
}

void write_manifest(const DatasetManifest& m, const fs::path& path) {
  const fs::path base = path.parent_path();
  ordered_json doc;
  doc["format"] = "mmt-manifest";
  doc["version"] = 1;
  doc["t_max"] = m.t_max;
  doc["max_features_per_expert"] = m.max_features_per_expert;
  doc["experts"] = ordered_json::array();
  for (const auto& e : m.experts) {
    doc["experts"].push_back({{"name", e.name}, {"native_dim", e.native_dim}, {"temporal", e.temporal}});
  }
  doc["videos"] = ordered_json::array();
  for (const auto& v : m.videos) {
    ordered_json features = ordered_json::object();
    for (std::size_t i = 0; i < m.experts.size(); ++i) {
      if (i < v.feature_paths.size() && v.feature_paths[i]) {
        features[m.experts[i].name] = fs::proximate(*v.feature_paths[i], base).generic_string();
      } else {
        features[m.experts[i].name] = nullptr;
      }
    }
    doc["videos"].push_back({{"id", v.id}, {"duration", v.duration}, {"features", features}});
  }
  doc["captions"] = ordered_json::array();
  for (const auto& c : m.captions) {
    doc["captions"].push_back({{"id", c.id}, {"video_id", c.video_id}, {"text", c.text}});
  }
  doc["splits"] = {{"train", m.split(Split::train)}, {"val", m.split(Split::val)}, {"test", m.split(Split::test)}};
  if (!m.contrastive_pairs.empty()) {
    doc["contrastive_pairs"] = ordered_json::array();
    for (const auto& [a, b] : m.contrastive_pairs) doc["contrastive_pairs"].push_back({a, b});
  }
  doc["metadata"] = ordered_json::parse(m.metadata_json);
  io::write_text(path, doc.dump(2) + "\n");
}

std::vector<Pair> Dataset::training_pairs(Split split) const {
  std::unordered_set<std::size_t> in_split(split_videos[static_cast<std::size_t>(split)].begin(),
                                           split_videos[static_cast<std::size_t>(split)].end());
  std::unordered_map<std::string, std::size_t> video_of;
  for (std::size_t i = 0; i < videos.size(); ++i) video_of[videos[i].video_id] = i;
  std::vector<Pair> pairs;
  for (std::size_t c = 0; c < captions.size(); ++c) {
    const std::size_t v = video_of.at(captions[c].video_id);
    if (in_split.count(v)) pairs.push_back({v, c});
  }
  return pairs;
}

std::vector<Pair> Dataset::evaluation_pairs(Split split) const {
  std::unordered_map<std::string, std::size_t> first_caption;
  for (std::size_t c = 0; c < captions.size(); ++c) first_caption.emplace(captions[c].video_id, c);
  std::vector<Pair> pairs;
  for (std::size_t v : split_videos[static_cast<std::size_t>(split)]) {
    auto it = first_caption.find(videos[v].video_id);
    if (it != first_caption.end()) pairs.push_back({v, it->second});
  }
  return pairs;
}

std::optional<std::size_t> Dataset::caption_index(std::string_view id) const {
  for (std::size_t i = 0; i < captions.size(); ++i) {
    if (captions[i].caption_id == id) return i;
  }
  return std::nullopt;
}

Dataset load_dataset(const DatasetManifest& manifest, const LoadOptions& options, const Vocabulary& vocabulary) {
  Dataset ds;
  ds.manifest = manifest;
  ds.vocabulary = vocabulary;
  const std::size_t cap = options.max_features_per_expert.value_or(manifest.max_features_per_expert);
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& v : manifest.videos) {
    VideoRecord rec;
    rec.video_id = v.id;
    rec.duration = v.duration;
    for (std::size_t e = 0; e < manifest.experts.size(); ++e) {
      ExpertFeatureSequence seq;
      if (v.feature_paths[e]) {
        seq = read_expert_features(*v.feature_paths[e]);
        if (seq.present && seq.expert.native_dim != manifest.experts[e].native_dim) {
          throw ValidationError(v.feature_paths[e]->string() + ": native_dim " + std::to_string(seq.expert.native_dim) +
                                " does not match expert " + manifest.experts[e].name);
        }
        for (double t : seq.timestamps) {
          if (t < 0.0 || t >= v.duration) {
            throw ValidationError("video " + v.id + ": timestamp " + std::to_string(t) + " outside [0, duration)");
          }
          if (t >= manifest.t_max && !options.clamp_timestamps) {
            throw TimeRangeError("video " + v.id + ": timestamp " + std::to_string(t) + " >= t_max");
          }
        }
      }
      seq.expert = manifest.experts[e];
      if (!seq.present) seq.features = num::Tensor(num::Shape{0, seq.expert.native_dim});
      seq.truncate(cap);
      rec.experts.push_back(std::move(seq));
    }
    index[v.id] = ds.videos.size();
    ds.videos.push_back(std::move(rec));
  }
  for (const auto& c : manifest.captions) {
    ds.captions.push_back({c.id, c.video_id, c.text, tokenize(c.text, vocabulary, options.tokenizer)});
  }
  for (std::size_t s = 0; s < 3; ++s) {
    for (const auto& id : manifest.splits[s]) ds.split_videos[s].push_back(index.at(id));
  }
  return ds;
}

Dataset load_dataset(const DatasetManifest& manifest, const LoadOptions& options) {
  return load_dataset(manifest, options, manifest.vocabulary);
}

}  // namespace mmt::data
