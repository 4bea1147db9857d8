// SPDX-License-Identifier: Apache-2.0
#include "mmt/cli/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mmt/config.hpp"
#include "mmt/data/synthetic.hpp"
#include "mmt/errors.hpp"

namespace mmt::cli {
namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!text.empty() && text.back() != '\n') out << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute()) return p;
  return fs::absolute(base / p).lexically_normal();
}

// Options shared by several subcommands.
struct Options {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::string split;
  std::vector<std::string> ablation;
  std::string manifest;
  std::string checkpoint;
  std::string store;
  std::string query;
  std::size_t k = 10;
};

// Run config from --config or the individual flags, with CLI overrides applied.
RunConfig gather_run_config(const Options& o) {
  RunConfig rc;
  if (!o.config.empty()) rc = load_run_config(o.config);
  if (!o.manifest.empty()) rc.manifest = fs::absolute(o.manifest).lexically_normal();
  if (!o.out.empty()) rc.output_dir = fs::absolute(o.out).lexically_normal();
  if (!o.checkpoint.empty()) rc.checkpoint = fs::absolute(o.checkpoint).lexically_normal();
  if (!o.seeds.empty()) rc.seeds = o.seeds;
  if (!o.split.empty()) rc.eval_split = data::parse_split(o.split);
  for (const auto& a : o.ablation) {
    apply_override(rc.train, a);
    rc.ablation.push_back(a);
  }
  return rc;
}

std::string config_tag(const RunConfig& rc) {
  if (rc.ablation.empty()) return "default";
  std::string tag;
  for (const auto& a : rc.ablation) tag += (tag.empty() ? "" : ",") + a;
  return tag;
}

ordered_json metrics_json(const RetrievalMetrics& m) {
  return {{"R@1", m.r1}, {"R@5", m.r5}, {"R@10", m.r10}, {"R@50", m.r50}, {"MdR", m.median_rank},
          {"MnR", m.mean_rank}, {"queries", m.queries}};
}

struct LoadedCheckpoint {
  Checkpoint ckpt;
  TrainConfig train;
  data::Dataset dataset;
};

LoadedCheckpoint load_for_eval(const fs::path& checkpoint, const fs::path& manifest_path) {
  if (checkpoint.empty()) throw ConfigError("checkpoint: no checkpoint given (--checkpoint or \"checkpoint\")");
  if (manifest_path.empty()) throw ConfigError("manifest: no manifest given (--manifest or \"manifest\")");
  LoadedCheckpoint l;
  l.ckpt = load_checkpoint(checkpoint);
  l.train = train_config_from_json(l.ckpt.train_config_json);
  auto manifest = data::load_manifest(manifest_path);
  check_compatible(l.ckpt, manifest);
  l.dataset = data::load_dataset(manifest, l.train.load_options(), data::Vocabulary::from_words(l.ckpt.vocabulary));
  return l;
}

int cmd_synth(const Options& o, std::ostream& out) {
  data::SyntheticSpec spec;
  if (!o.config.empty()) spec = synthetic_spec_from_json(read_text(o.config));
  if (o.out.empty()) throw ConfigError("--out: synth needs an output directory");
  if (o.seeds.size() > 1) throw ConfigError("--seed: synth takes a single seed");
  const std::uint64_t seed = o.seeds.empty() ? 0 : o.seeds.front();
  const fs::path dir = o.out;
  fs::create_directories(dir);
  const auto m = data::generate_synthetic_dataset(spec, seed, dir);
  ordered_json summary = {{"manifest", fs::absolute(dir / "manifest.json").lexically_normal().string()},
                          {"seed", seed},
                          {"experts", m.experts.size()},
                          {"videos", m.videos.size()},
                          {"captions", m.captions.size()},
                          {"train", m.split(data::Split::train).size()},
                          {"val", m.split(data::Split::val).size()},
                          {"test", m.split(data::Split::test).size()},
                          {"contrastive_pairs", m.contrastive_pairs.size()}};
  write_text(dir / "synth_summary.json", summary.dump(2));
  out << "wrote " << m.videos.size() << " videos (" << summary["train"] << " train / " << summary["val"] << " val / "
      << summary["test"] << " test), " << m.captions.size() << " captions, " << m.contrastive_pairs.size()
      << " contrastive pairs to " << dir.string() << "\n";
  return kOk;
}

int cmd_validate(const Options& o, std::ostream& out) {
  RunConfig rc = gather_run_config(o);
  rc.train.validate();
  rc.validate();
  const auto manifest = data::load_manifest(rc.manifest);
  const auto ds = data::load_dataset(manifest, rc.train.load_options());
  const auto train_pairs = ds.training_pairs(data::Split::train).size();
  if (train_pairs < rc.train.batch_size) {
    throw ConfigError("batch_size: training split has " + std::to_string(train_pairs) + " pairs, fewer than " +
                      std::to_string(rc.train.batch_size));
  }
  ordered_json summary = {{"manifest", rc.manifest.string()},
                          {"experts", manifest.experts.size()},
                          {"videos", manifest.videos.size()},
                          {"captions", manifest.captions.size()},
                          {"vocabulary", manifest.vocabulary.size()},
                          {"train_pairs", train_pairs},
                          {"seeds", rc.seeds},
                          {"valid", true}};
  out << summary.dump(2) << "\n";
  return kOk;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  RunConfig rc = gather_run_config(o);
  rc.train.validate();
  rc.validate();
  if (rc.output_dir.empty()) throw ConfigError("output_dir: no output directory (--out or \"output_dir\")");
  const auto manifest = data::load_manifest(rc.manifest);
  const auto ds = data::load_dataset(manifest, rc.train.load_options());
  fs::create_directories(rc.output_dir);
  write_text(rc.output_dir / "run_config.json", run_config_to_json(rc));

  const std::string tag = config_tag(rc);
  std::vector<RunReport> reports;
  const bool has_eval = !ds.evaluation_pairs(rc.eval_split).empty();
  for (std::uint64_t seed : rc.seeds) {
    TrainConfig cfg = rc.train;
    cfg.seed = seed;
    Trainer trainer(cfg, ds);
    trainer.on_log = [&err, seed](const LossRecord& r) {
      char line[160];
      std::snprintf(line, sizeof line, "seed %llu step %zu loss %.6f lr %.3g |g| %.4g\n",
                    static_cast<unsigned long long>(seed), r.step, r.loss, r.lr, r.grad_norm);
      err << line;
    };
    trainer.run();
    const fs::path dir = rc.output_dir / ("seed-" + std::to_string(seed));
    fs::create_directories(dir);
    save_checkpoint(trainer.checkpoint(), dir / "checkpoint.mmtc");
    write_text(dir / "train_config.json", train_config_to_json(cfg));
    write_text(dir / "trace.json", trace_to_json(trainer.trace()));
    if (has_eval) {
      const auto e = evaluate_split(trainer.model(), ds, rc.eval_split, tag);
      reports.push_back({tag, seed, e.t2v, e.v2t});
    }
  }
  if (has_eval) {
    write_text(rc.output_dir / "report.json", report_to_json(reports));
    const std::string table = report_to_table(reports);
    write_text(rc.output_dir / "report.txt", table);
    out << "split " << data::to_string(rc.eval_split) << "\n" << table;
  } else {
    out << "trained " << rc.seeds.size() << " seed(s); split " << data::to_string(rc.eval_split)
        << " is empty, no report\n";
  }
  return kOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  RunConfig rc = gather_run_config(o);
  auto l = load_for_eval(rc.checkpoint, rc.manifest);
  if (l.dataset.evaluation_pairs(rc.eval_split).empty()) {
    throw DataError("split " + data::to_string(rc.eval_split) + " has no videos");
  }
  const Model model = model_from_checkpoint(l.ckpt);
  const auto [videos, captions] = precompute_split(model, l.dataset, rc.eval_split);
  const auto s = similarity_matrix(videos, captions);
  const std::string tag = rc.checkpoint.filename().string();
  RunReport report{tag, l.train.seed,
                   metrics_from_ranks(ranks_from_matrix(s.values, Direction::text_to_video), Direction::text_to_video,
                                      tag),
                   metrics_from_ranks(ranks_from_matrix(s.values, Direction::video_to_text), Direction::video_to_text,
                                      tag)};
  const std::vector<RunReport> reports{report};
  const std::string table = report_to_table(reports);
  if (!rc.output_dir.empty()) {
    write_text(rc.output_dir / "eval_report.json", report_to_json(reports));
    write_text(rc.output_dir / "eval_report.txt", table);
  }
  ordered_json doc = {{"checkpoint", rc.checkpoint.string()},
                      {"split", data::to_string(rc.eval_split)},
                      {"text_to_video", metrics_json(report.t2v)},
                      {"video_to_text", metrics_json(report.v2t)}};
  out << doc.dump(2) << "\n" << table;
  return kOk;
}

int cmd_precompute(const Options& o, std::ostream& out) {
  RunConfig rc = gather_run_config(o);
  if (rc.output_dir.empty()) throw ConfigError("--out: precompute needs an output directory");
  auto l = load_for_eval(rc.checkpoint, rc.manifest);
  const Model model = model_from_checkpoint(l.ckpt);
  const auto [videos, captions] = precompute_split(model, l.dataset, rc.eval_split);
  fs::create_directories(rc.output_dir);
  videos.save(rc.output_dir / "videos.mmts");
  captions.save(rc.output_dir / "captions.mmts");
  ordered_json doc = {{"split", data::to_string(rc.eval_split)},
                      {"videos", videos.size()},
                      {"captions", captions.size()},
                      {"video_store", (rc.output_dir / "videos.mmts").string()},
                      {"caption_store", (rc.output_dir / "captions.mmts").string()}};
  out << doc.dump(2) << "\n";
  return kOk;
}

int cmd_retrieve(const Options& o, std::ostream& out, std::ostream& err) {
  RunConfig rc = gather_run_config(o);
  if (rc.checkpoint.empty()) throw ConfigError("--checkpoint: retrieve needs a checkpoint");
  if (o.store.empty()) throw ConfigError("--store: retrieve needs a video store");
  if (o.query.empty()) throw ConfigError("--query: retrieve needs query text");
  if (o.k == 0) throw ConfigError("--k: must be >= 1");
  const Checkpoint ckpt = load_checkpoint(rc.checkpoint);
  if (ckpt.model.caption_embedder != CaptionEmbedderKind::trainable_token) {
    throw ConfigError("caption_embedder: free-text queries need the trainable_token embedder");
  }
  const TrainConfig tc = train_config_from_json(ckpt.train_config_json);
  const VideoStore store = VideoStore::load(o.store);
  if (store.size() == 0) throw DataError("video store " + o.store + " is empty");
  if (store.experts != ckpt.model.experts.size() || store.dim != ckpt.model.model_dim) {
    throw IncompatibleCheckpointError("video store shape does not match the checkpoint's model");
  }
  const Model model = model_from_checkpoint(ckpt);
  const auto vocab = data::Vocabulary::from_words(ckpt.vocabulary);
  data::CaptionRecord query{"query", "", o.query, data::tokenize(o.query, vocab, tc.load_options().tokenizer)};
  const data::CaptionRecord* q = &query;
  const auto rep = model.represent_captions(std::span<const data::CaptionRecord* const>(&q, 1));
  if (o.k > store.size()) {
    err << "warning: k=" << o.k << " exceeds the store size " << store.size() << "; returning all videos\n";
  }
  const auto hits = top_k(store, rep.front(), o.k);
  ordered_json results = ordered_json::array();
  for (const auto& h : hits) results.push_back({{"video_id", h.id}, {"score", h.score}});
  ordered_json doc = {{"query", o.query}, {"k", hits.size()}, {"results", results}};
  out << doc.dump(2) << "\n";
  return kOk;
}

}  // namespace

void RunConfig::validate() const {
  if (seeds.empty()) throw ConfigError("seeds: at least one seed is required");
  if (manifest.empty()) throw ConfigError("manifest: no manifest path given");
  if (!fs::exists(manifest)) throw ConfigError("manifest: " + manifest.string() + " does not exist");
}

RunConfig parse_run_config(const std::string& json_text, const fs::path& base_dir) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("run config: top level must be an object");
  RunConfig rc;
  const fs::path base = fs::absolute(base_dir.empty() ? fs::path(".") : base_dir);
  try {
    for (const auto& [key, value] : doc.items()) {
      if (key == "manifest") {
        rc.manifest = resolve(value.get<std::string>(), base);
      } else if (key == "output_dir") {
        rc.output_dir = resolve(value.get<std::string>(), base);
      } else if (key == "checkpoint") {
        rc.checkpoint = resolve(value.get<std::string>(), base);
      } else if (key == "seeds") {
        rc.seeds = value.get<std::vector<std::uint64_t>>();
      } else if (key == "ablation") {
        rc.ablation = value.get<std::vector<std::string>>();
      } else if (key == "eval_split") {
        rc.eval_split = data::parse_split(value.get<std::string>());
      } else if (key == "train") {
        rc.train = train_config_from_json(value.dump());
      } else {
        throw ConfigError("run config: unknown key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ill-typed value: ") + e.what());
  }
  if (!rc.train.precomputed_captions.empty()) {
    rc.train.precomputed_captions = resolve(rc.train.precomputed_captions, base).string();
  }
  for (const auto& a : rc.ablation) apply_override(rc.train, a);
  return rc;
}

RunConfig load_run_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("--config: " + path.string() + " does not exist");
  return parse_run_config(read_text(path), path.parent_path());
}

std::string run_config_to_json(const RunConfig& cfg) {
  ordered_json doc;
  doc["manifest"] = cfg.manifest.string();
  doc["output_dir"] = cfg.output_dir.string();
  if (!cfg.checkpoint.empty()) doc["checkpoint"] = cfg.checkpoint.string();
  doc["seeds"] = cfg.seeds;
  doc["ablation"] = cfg.ablation;
  doc["eval_split"] = data::to_string(cfg.eval_split);
  // Ablations are already folded into the train section.
  doc["train"] = ordered_json::parse(train_config_to_json(cfg.train));
  doc["train"]["preset"] = "paper";
  return doc.dump(2);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-modal transformer training and retrieval"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON config file");
    sub->add_option("--seed", o.seeds, "Seed (repeatable)");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--split", o.split, "Split: train, val or test");
    sub->add_option("--ablation", o.ablation, "KEY=VALUE override of a training field (repeatable)");
    sub->add_option("--manifest", o.manifest, "Dataset manifest");
    sub->add_option("--checkpoint", o.checkpoint, "Checkpoint file");
  };
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--config", o.config, "Synthetic spec JSON (defaults when omitted)");
  synth->add_option("--seed", o.seeds, "Seed");
  synth->add_option("--out", o.out, "Output directory")->required();
  auto* validate = app.add_subcommand("validate", "Validate a run config and its dataset");
  add_common(validate);
  auto* train_cmd = app.add_subcommand("train", "Train one model per seed");
  add_common(train_cmd);
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  add_common(eval);
  auto* precompute = app.add_subcommand("precompute", "Write video and caption stores for a split");
  add_common(precompute);
  auto* retrieve = app.add_subcommand("retrieve", "Top-k videos for a text query");
  retrieve->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  retrieve->add_option("--store", o.store, "Video store (videos.mmts)")->required();
  retrieve->add_option("--query", o.query, "Query text")->required();
  retrieve->add_option("--k", o.k, "Number of results");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    if (const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front()) {
      err << sub->help();
    }
    return kUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(o, out);
    if (validate->parsed()) return cmd_validate(o, out);
    if (train_cmd->parsed()) return cmd_train(o, out, err);
    if (eval->parsed()) return cmd_eval(o, out);
    if (precompute->parsed()) return cmd_precompute(o, out);
    if (retrieve->parsed()) return cmd_retrieve(o, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const IncompatibleCheckpointError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kUsage;
}

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, out, err);
}

}  // namespace mmt::cli
