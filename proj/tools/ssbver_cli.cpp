// ssbver: synthetic data, training, evaluation, saliency and profiling from the shell.
//
// Exit codes: 0 ok, 2 config, 3 io, 4 data/protocol, 5 numeric.

#include "ssbver/checkpoint.hpp"
#include "ssbver/config.hpp"
#include "ssbver/dataio.hpp"
#include "ssbver/errors.hpp"
#include "ssbver/eval.hpp"
#include "ssbver/png_io.hpp"
#include "ssbver/profiler.hpp"
#include "ssbver/trainer.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ssbver;

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFileError(path.string() + " not found");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + " is not valid JSON: " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

std::optional<std::uint64_t> env_seed() {
  const char* text = std::getenv("SSBVER_SEED");
  if (!text || !*text) return std::nullopt;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(text, &used);
    if (used != std::string(text).size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(std::string("SSBVER_SEED is not an unsigned integer: ") + text);
  }
}

DatasetManifest load_dataset(const fs::path& path) {
  try {
    return load_manifest(path);
  } catch (const MissingFileError& e) {
    throw DataError(e.what());
  }
}

std::vector<ImageSample> load_eval_split(const DatasetManifest& manifest, Split which) {
  try {
    return load_split(manifest, which);
  } catch (const MissingFileError& e) {
    throw DataError(e.what());
  }
}

RetrievalLabels retrieval_labels(const std::vector<ImageSample>& samples) {
  RetrievalLabels labels;
  for (const auto& s : samples) {
    labels.identities.push_back(s.identity);
    labels.cameras.push_back(s.camera);
  }
  return labels;
}

// --- commands ---------------------------------------------------------------

struct SyntheticArgs {
  std::string spec;
  std::string out;
};

int make_synthetic(const SyntheticArgs& a) {
  const SyntheticSpec spec = synthetic_spec_from_json(read_json_file(a.spec));
  const DatasetManifest manifest = generate_synthetic(spec, a.out);
  write_json_file(fs::path(a.out) / "config.json", to_json(spec));
  std::cout << "wrote " << manifest.entries.size() << " images to " << a.out << '\n';
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  bool baseline = false;
  std::vector<std::string> overrides;
  bool quiet = false;
};

int train(const TrainArgs& a) {
  json doc = to_json(TrainConfig{});
  if (!a.config.empty()) merge_checked(doc, read_json_file(a.config));
  for (const auto& o : a.overrides) apply_override(doc, o);
  if (const auto seed = env_seed()) doc["seed"] = *seed;
  TrainConfig cfg = train_config_from_json(doc);
  if (a.baseline) make_baseline(cfg);

  const DatasetManifest manifest = load_dataset(a.data);
  RunOptions options;
  options.out_dir = a.out;
  options.verbose = !a.quiet;
  const TrainResult result = run_training(cfg, manifest, options);
  std::cout << "trained " << result.state.iteration << " steps; checkpoint " << (fs::path(a.out) / "final.ckpt").string()
            << '\n';
  return 0;
}

struct EvaluateArgs {
  std::string checkpoint;
  std::string data;
  std::string protocol;
  std::string out;
};

int evaluate(const EvaluateArgs& a) {
  LoadedCheckpoint loaded = load_checkpoint(a.checkpoint);
  const Protocol protocol = protocol_from_string(a.protocol.empty() ? loaded.config.eval_protocol : a.protocol);
  loaded.config.eval_protocol = to_string(protocol);

  const DatasetManifest manifest = load_dataset(a.data);
  const auto queries = load_eval_split(manifest, Split::query);
  const auto gallery = load_eval_split(manifest, Split::gallery);
  if (queries.empty() || gallery.empty()) throw DataError("manifest needs non-empty query and gallery splits");

  const Encoder& teacher = *loaded.state.pair.teacher.encoder;
  const BnNeckState& bn = loaded.state.head.bn;
  const EmbeddingMatrix q = extract_embeddings(teacher, bn, queries);
  const EmbeddingMatrix g = extract_embeddings(teacher, bn, gallery);
  const RetrievalMetrics metrics =
      evaluate_retrieval(pairwise_distances(q.rows, g.rows), retrieval_labels(queries), retrieval_labels(gallery),
                         protocol);

  fs::create_directories(a.out);
  write_json_file(fs::path(a.out) / "metrics.json", to_json(metrics));
  write_json_file(fs::path(a.out) / "config.json", to_json(loaded.config));

  EmbeddingMatrix all{Matrix(q.count() + g.count(), q.dim()), true};
  all.rows << q.rows, g.rows;
  std::vector<int> identities = retrieval_labels(queries).identities;
  for (const auto& s : gallery) identities.push_back(s.identity);
  write_distance_report(a.out, distance_report(all, identities));

  std::cout << to_json(metrics).dump() << '\n';
  return 0;
}

struct SaliencyArgs {
  std::string checkpoint;
  std::string query;
  std::string gallery;
  std::string out;
};

int saliency(const SaliencyArgs& a) {
  const LoadedCheckpoint loaded = load_checkpoint(a.checkpoint);
  const Image query = read_png(a.query);
  const Image gallery = read_png(a.gallery);
  const SaliencyResult result = saliency_pair(*loaded.state.pair.teacher.encoder, loaded.state.head.bn, query, gallery);
  write_saliency(a.out, result, query, gallery);
  write_json_file(fs::path(a.out) / "config.json", to_json(loaded.config));
  std::cout << "similarity " << result.score << '\n';
  return 0;
}

struct ProfileArgs {
  std::string checkpoint;
  std::string arch;
  std::string out;
  int size = 128;
  int warmup = 20;
  int iters = 100;
};

int profile(const ProfileArgs& a) {
  std::unique_ptr<Encoder> encoder;
  json source;
  if (!a.checkpoint.empty()) {
    LoadedCheckpoint loaded = load_checkpoint(a.checkpoint);
    encoder = std::move(loaded.state.pair.teacher.encoder);
    source = {{"checkpoint", a.checkpoint}};
  } else {
    TinyEncoderConfig cfg;
    if (a.arch == "tiny-deep") cfg.convs_per_stage = 2;
    else if (a.arch != "tiny") throw ConfigError("unknown arch '" + a.arch + "' (expected tiny or tiny-deep)");
    encoder = std::make_unique<TinyEncoder>(cfg);
    source = {{"arch", a.arch}};
  }
  const LatencyOptions options{a.size, a.size, a.warmup, a.iters};
  const EfficiencyReport report = profile_encoder(*encoder, options);

  fs::create_directories(a.out);
  write_json_file(fs::path(a.out) / "efficiency.json", to_json(report));
  source["encoder"] = encoder->describe();
  source["image_size"] = {a.size, a.size};
  source["warmup"] = a.warmup;
  source["iters"] = a.iters;
  write_json_file(fs::path(a.out) / "config.json", source);
  std::cout << to_json(report).dump() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised vehicle re-identification toolkit"};
  app.require_subcommand(1);

  SyntheticArgs syn;
  auto* syn_cmd = app.add_subcommand("make-synthetic", "Render a synthetic vehicle dataset");
  syn_cmd->add_option("--spec", syn.spec, "Synthetic spec JSON")->required();
  syn_cmd->add_option("--out", syn.out, "Output directory")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train student/teacher from a manifest");
  train_cmd->add_option("--config", tr.config, "Config JSON (defaults when omitted)");
  train_cmd->add_option("--data", tr.data, "Manifest JSONL")->required();
  train_cmd->add_option("--out", tr.out, "Output directory")->required();
  train_cmd->add_flag("--baseline", tr.baseline, "Re-id losses only, no SSL head");
  train_cmd->add_option("--set", tr.overrides, "Override dotted.path=value (repeatable)");
  train_cmd->add_flag("--quiet", tr.quiet, "No per-epoch progress");

  EvaluateArgs ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "Retrieval metrics of a checkpoint's teacher");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data", ev.data, "Manifest JSONL with query and gallery splits")->required();
  eval_cmd->add_option("--protocol", ev.protocol, "none or cross_camera (default: from checkpoint config)");
  eval_cmd->add_option("--out", ev.out, "Output directory")->required();

  SaliencyArgs sal;
  auto* sal_cmd = app.add_subcommand("saliency", "Similarity-gradient saliency for an image pair");
  sal_cmd->add_option("--checkpoint", sal.checkpoint, "Checkpoint file")->required();
  sal_cmd->add_option("--query", sal.query, "Query PNG")->required();
  sal_cmd->add_option("--gallery", sal.gallery, "Gallery PNG")->required();
  sal_cmd->add_option("--out", sal.out, "Output directory")->required();

  ProfileArgs prof;
  auto* prof_cmd = app.add_subcommand("profile", "Parameter count, latency and memory of an encoder");
  auto* ck = prof_cmd->add_option("--checkpoint", prof.checkpoint, "Checkpoint whose teacher is profiled");
  auto* arch = prof_cmd->add_option("--arch", prof.arch, "tiny or tiny-deep");
  ck->excludes(arch);
  prof_cmd->add_option("--out", prof.out, "Output directory")->required();
  prof_cmd->add_option("--size", prof.size, "Square input extent")->check(CLI::Range(8, 4096));
  prof_cmd->add_option("--warmup", prof.warmup, "Discarded forwards")->check(CLI::NonNegativeNumber);
  prof_cmd->add_option("--iters", prof.iters, "Measured forwards (>= 10)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::config);
  }

  try {
    if (*syn_cmd) return make_synthetic(syn);
    if (*train_cmd) return train(tr);
    if (*eval_cmd) return evaluate(ev);
    if (*sal_cmd) return saliency(sal);
    if (*prof_cmd) {
      if (prof.checkpoint.empty() && prof.arch.empty()) throw ConfigError("profile needs --checkpoint or --arch");
      return profile(prof);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::config);
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::io);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
