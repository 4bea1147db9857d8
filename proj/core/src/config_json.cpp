// SPDX-License-Identifier: Apache-2.0
#include "mmt/config.hpp"

#include <functional>
#include <map>

#include "json.hpp"
#include "mmt/errors.hpp"

namespace mmt {
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

json parse_object(std::string_view text, const char* what) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string(what) + " is not valid JSON: " + e.what());
  }
  if (!doc.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
  return doc;
}

template <typename T>
T as(const json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw ConfigError("");
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw ConfigError("");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError("");
    }
    return v.get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' has an invalid value: " + v.dump());
  }
}

// Field table: name -> (reader, writer) on a struct.
template <typename S>
struct Field {
  std::function<void(S&, const json&, const std::string&)> read;
  std::function<ordered_json(const S&)> write;
};

template <typename S, typename T>
Field<S> plain(T S::*member) {
  return {[member](S& s, const json& v, const std::string& key) { s.*member = as<T>(v, key); },
          [member](const S& s) { return ordered_json(s.*member); }};
}

template <typename S, typename E>
Field<S> enumerated(E S::*member, E (*parse)(std::string_view), std::string (*show)(E)) {
  return {[member, parse](S& s, const json& v, const std::string& key) { s.*member = parse(as<std::string>(v, key)); },
          [member, show](const S& s) { return ordered_json(show(s.*member)); }};
}

std::string show_pool(num::PoolMode m) { return to_string(m); }
std::string show_encoder(EncoderKind k) { return to_string(k); }
std::string show_temporal(TemporalMode m) { return to_string(m); }
std::string show_caption(CaptionEmbedderKind k) { return to_string(k); }

const std::vector<std::pair<std::string, Field<TrainConfig>>>& train_fields() {
  using T = TrainConfig;
  static const std::vector<std::pair<std::string, Field<T>>> fields = {
      {"batch_size", plain(&T::batch_size)},
      {"initial_lr", plain(&T::initial_lr)},
      {"decay_factor", plain(&T::decay_factor)},
      {"decay_every_steps", plain(&T::decay_every_steps)},
      {"total_steps", plain(&T::total_steps)},
      {"margin", plain(&T::margin)},
      {"adam_beta1", plain(&T::adam_beta1)},
      {"adam_beta2", plain(&T::adam_beta2)},
      {"adam_epsilon", plain(&T::adam_epsilon)},
      {"clip_grad_norm", plain(&T::clip_grad_norm)},
      {"seed", plain(&T::seed)},
      {"encoder", enumerated(&T::encoder, parse_encoder_kind, show_encoder)},
      {"agg_init", enumerated(&T::agg_init, parse_pool_mode, show_pool)},
      {"temporal", enumerated(&T::temporal, parse_temporal_mode, show_temporal)},
      {"layers", plain(&T::layers)},
      {"heads", plain(&T::heads)},
      {"model_dim", plain(&T::model_dim)},
      {"intermediate_dim", plain(&T::intermediate_dim)},
      {"dropout", plain(&T::dropout)},
      {"normalize_video", plain(&T::normalize_video)},
      {"caption_embedder", enumerated(&T::caption_embedder, parse_caption_embedder, show_caption)},
      {"caption_dim", plain(&T::caption_dim)},
      {"caption_aggregator", enumerated(&T::caption_aggregator, parse_pool_mode, show_pool)},
      {"caption_positions", plain(&T::caption_positions)},
      {"precomputed_captions", plain(&T::precomputed_captions)},
      {"max_features_per_expert", plain(&T::max_features_per_expert)},
      {"max_tokens", plain(&T::max_tokens)},
      {"remove_stop_words", plain(&T::remove_stop_words)},
      {"clamp_timestamps", plain(&T::clamp_timestamps)},
      {"eval_every_steps", plain(&T::eval_every_steps)},
      {"log_every_steps", plain(&T::log_every_steps)},
      {"freeze_caption", plain(&T::freeze_caption)},
      {"freeze_video", plain(&T::freeze_video)},
  };
  return fields;
}

void apply_train_json(TrainConfig& cfg, const json& doc) {
  const auto& fields = train_fields();
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (it.key() == "preset") continue;
    auto f = std::find_if(fields.begin(), fields.end(), [&](const auto& p) { return p.first == it.key(); });
    if (f == fields.end()) throw ConfigError("unknown config key '" + it.key() + "'");
    f->second.read(cfg, it.value(), it.key());
  }
}

TrainConfig preset(const json& doc) {
  if (!doc.contains("preset")) return TrainConfig::paper_defaults();
  const std::string p = as<std::string>(doc.at("preset"), "preset");
  if (p == "paper") return TrainConfig::paper_defaults();
  if (p == "tiny") return TrainConfig::tiny();
  throw ConfigError("config key 'preset' must be paper or tiny, got '" + p + "'");
}

}  // namespace

TrainConfig train_config_from_json(std::string_view text) {
  const json doc = parse_object(text, "training config");
  TrainConfig cfg = preset(doc);
  apply_train_json(cfg, doc);
  return cfg;
}

std::string train_config_to_json(const TrainConfig& cfg) {
  ordered_json doc;
  for (const auto& [name, field] : train_fields()) doc[name] = field.write(cfg);
  return doc.dump(2);
}

void apply_override(TrainConfig& cfg, std::string_view key, std::string_view value) {
  if (key == "size") {
    const auto x = value.find('x');
    if (x == std::string_view::npos) throw ConfigError("size override must look like <layers>x<heads>");
    try {
      cfg.layers = std::stoul(std::string(value.substr(0, x)));
      cfg.heads = std::stoul(std::string(value.substr(x + 1)));
    } catch (const std::exception&) {
      throw ConfigError("size override must look like <layers>x<heads>, got '" + std::string(value) + "'");
    }
    return;
  }
  json v;
  try {
    v = json::parse(value);
  } catch (const json::parse_error&) {
    v = std::string(value);
  }
  json doc = json::object();
  doc[std::string(key)] = v;
  apply_train_json(cfg, doc);
}

void apply_override(TrainConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override must be KEY=VALUE, got '" + std::string(assignment) + "'");
  }
  apply_override(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

std::string model_config_to_json(const ModelConfig& c) {
  ordered_json doc;
  doc["experts"] = ordered_json::array();
  for (const auto& e : c.experts) {
    doc["experts"].push_back({{"name", e.name}, {"native_dim", e.native_dim}, {"temporal", e.temporal}});
  }
  doc["t_max"] = c.t_max;
  doc["max_features_per_expert"] = c.max_features_per_expert;
  doc["encoder"] = to_string(c.encoder);
  doc["temporal"] = to_string(c.temporal);
  doc["agg_init"] = to_string(c.agg_init);
  doc["model_dim"] = c.model_dim;
  doc["layers"] = c.layers;
  doc["heads"] = c.heads;
  doc["intermediate_dim"] = c.intermediate_dim;
  doc["dropout"] = c.dropout;
  doc["clamp_timestamps"] = c.clamp_timestamps;
  doc["shuffle_seed"] = c.shuffle_seed;
  doc["caption_embedder"] = to_string(c.caption_embedder);
  doc["vocab_size"] = c.vocab_size;
  doc["caption_dim"] = c.caption_dim;
  doc["caption_aggregator"] = to_string(c.caption_aggregator);
  doc["caption_positions"] = c.caption_positions;
  doc["normalize_video"] = c.normalize_video;
  return doc.dump();
}

ModelConfig model_config_from_json(std::string_view text) {
  const json doc = parse_object(text, "model config");
  ModelConfig c;
  try {
    for (const auto& e : doc.at("experts")) {
      c.experts.push_back({e.at("name").get<std::string>(), e.at("native_dim").get<std::size_t>(),
                           e.at("temporal").get<bool>()});
    }
    c.t_max = doc.at("t_max").get<double>();
    c.max_features_per_expert = doc.at("max_features_per_expert").get<std::size_t>();
    c.encoder = parse_encoder_kind(doc.at("encoder").get<std::string>());
    c.temporal = parse_temporal_mode(doc.at("temporal").get<std::string>());
    c.agg_init = parse_pool_mode(doc.at("agg_init").get<std::string>());
    c.model_dim = doc.at("model_dim").get<std::size_t>();
    c.layers = doc.at("layers").get<std::size_t>();
    c.heads = doc.at("heads").get<std::size_t>();
    c.intermediate_dim = doc.at("intermediate_dim").get<std::size_t>();
    c.dropout = doc.at("dropout").get<double>();
    c.clamp_timestamps = doc.at("clamp_timestamps").get<bool>();
    c.shuffle_seed = doc.at("shuffle_seed").get<std::uint64_t>();
    c.caption_embedder = parse_caption_embedder(doc.at("caption_embedder").get<std::string>());
    c.vocab_size = doc.at("vocab_size").get<std::size_t>();
    c.caption_dim = doc.at("caption_dim").get<std::size_t>();
    c.caption_aggregator = parse_pool_mode(doc.at("caption_aggregator").get<std::string>());
    c.caption_positions = doc.at("caption_positions").get<std::size_t>();
    c.normalize_video = doc.at("normalize_video").get<bool>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return c;
}

namespace {

const std::vector<std::pair<std::string, Field<data::SyntheticSpec>>>& synthetic_fields() {
  using S = data::SyntheticSpec;
  static const std::vector<std::pair<std::string, Field<S>>> fields = {
      {"train_videos", plain(&S::train_videos)},
      {"val_videos", plain(&S::val_videos)},
      {"test_videos", plain(&S::test_videos)},
      {"event_types", plain(&S::event_types)},
      {"min_events", plain(&S::min_events)},
      {"max_events", plain(&S::max_events)},
      {"latent_dim", plain(&S::latent_dim)},
      {"features_per_event", plain(&S::features_per_event)},
      {"noise", plain(&S::noise)},
      {"t_max", plain(&S::t_max)},
      {"max_features_per_expert", plain(&S::max_features_per_expert)},
      {"order_contrastive", plain(&S::order_contrastive)},
      {"contrastive_fraction", plain(&S::contrastive_fraction)},
  };
  return fields;
}

}  // namespace

data::SyntheticSpec synthetic_spec_from_json(std::string_view text) {
  const json doc = parse_object(text, "synthetic spec");
  data::SyntheticSpec spec;
  const auto& fields = synthetic_fields();
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (it.key() == "experts") {
      spec.experts.clear();
      if (!it.value().is_array()) throw ConfigError("config key 'experts' must be an array");
      for (const auto& e : it.value()) {
        data::SyntheticExpert x;
        if (!e.is_object() || !e.contains("name")) throw ConfigError("each synthetic expert needs a name");
        for (auto f = e.begin(); f != e.end(); ++f) {
          if (f.key() == "name") {
            x.name = as<std::string>(f.value(), "experts.name");
          } else if (f.key() == "dim") {
            x.dim = as<std::size_t>(f.value(), "experts.dim");
          } else if (f.key() == "temporal") {
            x.temporal = as<bool>(f.value(), "experts.temporal");
          } else if (f.key() == "missing_probability") {
            x.missing_probability = as<double>(f.value(), "experts.missing_probability");
          } else {
            throw ConfigError("unknown config key 'experts." + f.key() + "'");
          }
        }
        spec.experts.push_back(std::move(x));
      }
      continue;
    }
    auto f = std::find_if(fields.begin(), fields.end(), [&](const auto& p) { return p.first == it.key(); });
    if (f == fields.end()) throw ConfigError("unknown config key '" + it.key() + "'");
    f->second.read(spec, it.value(), it.key());
  }
  spec.validate();
  return spec;
}

std::string synthetic_spec_to_json(const data::SyntheticSpec& spec) {
  ordered_json doc;
  for (const auto& [name, field] : synthetic_fields()) doc[name] = field.write(spec);
  doc["experts"] = ordered_json::array();
  for (const auto& e : spec.experts) {
    doc["experts"].push_back(
        {{"name", e.name}, {"dim", e.dim}, {"temporal", e.temporal}, {"missing_probability", e.missing_probability}});
  }
  return doc.dump(2);
}

}  // namespace mmt
