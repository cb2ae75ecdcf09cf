// Command-line front end. Six subcommands cover the full workflow:
//
//   gen-dataset         sample a refinement-pair corpus to JSONL
//   train-refiner       fit a seq2seq refiner on a corpus, save a checkpoint
//   self-program        run the loop where the spec rewrites its own refiner
//   program-classifier  run the loop that programs an image classifier
//   eval-spec           score one spec text exactly as the loop would
//   emit-metrics        turn an episode log into CSV metrics
//
// Option values resolve as flags > --config file > built-in defaults. Every
// command writes a run manifest recording the fully-resolved configuration
// and dataset digests; `--from-manifest` feeds a manifest back in as the
// config layer, which re-executes the run bit-for-bit.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error. Progress goes to
// stderr; machine-readable results go to files only.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "respec/data_io.hpp"
#include "respec/dsl.hpp"
#include "respec/errors.hpp"
#include "respec/evaluate.hpp"
#include "respec/loop.hpp"
#include "respec/manifest.hpp"
#include "respec/metrics.hpp"
#include "respec/mutation.hpp"
#include "respec/pairs_io.hpp"
#include "respec/refiner.hpp"
#include "respec/rng.hpp"
#include "respec/seq2seq.hpp"
#include "respec/train.hpp"

namespace fs = std::filesystem;
using namespace respec;

namespace {

// A bad flag or config value; mapped to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Option layering: flags > config file (or replayed manifest) > defaults.
// Every option is declared once with a key, default, and help line; the
// resolved key -> value map is exactly what the run manifest records.
// ---------------------------------------------------------------------------
class Options {
 public:
  explicit Options(CLI::App* cmd) : cmd_(cmd) {
    cmd->add_option("--config", config_path_,
                    "key = value file supplying defaults for any option");
    cmd->add_option("--from-manifest", manifest_path_,
                    "re-run with the resolved options of a previous run's manifest");
    cmd->add_option("--manifest", manifest_out_,
                    "where to write this run's manifest (default: next to the outputs)");
  }

  void add(const std::string& key, const std::string& def, const std::string& help) {
    auto [it, fresh] = entries_.try_emplace(key);
    if (!fresh) throw std::logic_error("duplicate option key: " + key);
    it->second.value = def;
    it->second.def = def;
    it->second.opt = cmd_->add_option("--" + key, it->second.value, help)->default_str(def);
  }

  // Applies the config layer. Call first in every command body.
  void resolve(const std::string& command) {
    if (!config_path_.empty() && !manifest_path_.empty())
      throw UsageError("--config and --from-manifest cannot be combined");
    std::map<std::string, std::string> layer;
    try {
      if (!config_path_.empty()) layer = run::load_config_file(config_path_);
      if (!manifest_path_.empty()) {
        replay_ = run::load_manifest(manifest_path_);
        if (replay_->command != command) {
          throw UsageError("manifest " + manifest_path_ + " records a '" + replay_->command +
                           "' run, not '" + command + "'");
        }
        layer = replay_->config;
      }
    } catch (const LoadError& e) {
      throw UsageError(e.what());
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    for (const auto& [k, v] : layer) {
      if (!entries_.count(k)) throw UsageError("unknown option '" + k + "' in config");
    }
    for (auto& [key, e] : entries_) {
      if (e.opt->count() > 0) continue;  // explicit flag wins
      auto it = layer.find(key);
      if (it != layer.end()) e.value = it->second;
    }
  }

  const std::string& str(const std::string& key) const { return entry(key).value; }

  std::string required(const std::string& key) const {
    const std::string& v = str(key);
    if (v.empty()) throw UsageError("missing --" + key);
    return v;
  }

  long long i64(const std::string& key) const {
    return parse_int<long long>(key, entry(key).value);
  }
  uint64_t u64(const std::string& key) const { return parse_int<uint64_t>(key, entry(key).value); }

  double f64(const std::string& key) const {
    const std::string& v = entry(key).value;
    try {
      size_t used = 0;
      double d = std::stod(v, &used);
      if (used == v.size()) return d;
    } catch (const std::exception&) {
    }
    throw UsageError("--" + key + ": expected a number, got '" + v + "'");
  }

  bool flag(const std::string& key) const {
    const std::string& v = entry(key).value;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw UsageError("--" + key + ": expected true or false, got '" + v + "'");
  }

  std::map<std::string, std::string> resolved() const {
    std::map<std::string, std::string> out;
    for (const auto& [k, e] : entries_) out[k] = e.value;
    return out;
  }

  // When replaying, checks an input dataset against the digest the original
  // run recorded; a mismatch means the replay cannot be bit-faithful.
  void verify_digest(const std::string& name, const std::string& actual) const {
    if (!replay_) return;
    auto it = replay_->dataset_digests.find(name);
    if (it == replay_->dataset_digests.end()) return;
    if (it->second != actual) {
      throw std::runtime_error("replay input '" + name + "' has digest " + actual +
                               " but the manifest recorded " + it->second +
                               "; this is not the dataset the original run used");
    }
  }

  std::string manifest_out(const std::string& fallback) const {
    return manifest_out_.empty() ? fallback : manifest_out_;
  }

 private:
  struct Entry {
    std::string value, def;
    CLI::Option* opt = nullptr;
  };

  const Entry& entry(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw std::logic_error("undeclared option key: " + key);
    return it->second;
  }

  template <typename T>
  static T parse_int(const std::string& key, const std::string& v) {
    T out{};
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size())
      throw UsageError("--" + key + ": expected an integer, got '" + v + "'");
    return out;
  }

  CLI::App* cmd_;
  std::map<std::string, Entry> entries_;  // node-based: stable value addresses
  std::string config_path_, manifest_path_, manifest_out_;
  std::optional<run::RunManifest> replay_;
};

Options& make_options(CLI::App* cmd) {
  static std::vector<std::unique_ptr<Options>> keep;
  keep.push_back(std::make_unique<Options>(cmd));
  return *keep.back();
}

// ---------------------------------------------------------------------------
// Small file helpers
// ---------------------------------------------------------------------------
std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError(LoadError::Kind::io, "cannot open: " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  if (is.bad()) throw LoadError(LoadError::Kind::io, "read failed: " + path);
  return buf.str();
}

void spill(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw SaveError("cannot open for writing: " + path);
  os << text;
  os.flush();
  if (!os) throw SaveError("write failed: " + path);
}

void write_manifest(const Options& o, const std::string& command, const std::string& path,
                    std::map<std::string, std::string> digests,
                    std::vector<std::string> outputs) {
  run::RunManifest m;
  m.command = command;
  m.config = o.resolved();
  m.dataset_digests = std::move(digests);
  m.outputs = std::move(outputs);
  run::save_manifest(path, m);
  std::cerr << "manifest: " << path << "\n";
}

// ---------------------------------------------------------------------------
// Shared option blocks and the builders that consume them
// ---------------------------------------------------------------------------
void add_refiner_opts(Options& o) {
  o.add("refiner", "oracle", "candidate proposer: oracle | learned | external");
  o.add("refiner-d-model", "128", "learned: embedding width of the refiner model");
  o.add("refiner-max-len", "96", "learned: maximum sequence length");
  o.add("refiner-epochs", "3", "learned: training epochs per episode");
  o.add("refiner-max-steps", "0", "learned: cap on training steps per episode (0 = none)");
  o.add("refiner-batch", "32", "learned: training batch size");
  o.add("refiner-lr", "0.001", "learned: learning rate");
  o.add("refiner-optimizer", "adam", "learned: adam | sgd");
  o.add("temperature", "1", "sampling temperature for proposals");
  o.add("top-k", "16", "sampling top-k filter (0 = off)");
  o.add("refiner-host", "127.0.0.1", "external: server host");
  o.add("refiner-port", "8700", "external: server port");
  o.add("refiner-path", "/refine", "external: request path");
  o.add("refiner-timeout", "30", "external: request timeout, seconds");
}

loop::RefinerConfig refiner_from(const Options& o) {
  loop::RefinerConfig rc;
  auto backend = loop::backend_from_name(o.str("refiner"));
  if (!backend) throw UsageError("--refiner must be oracle, learned, or external");
  rc.backend = *backend;
  rc.d_model = static_cast<int>(o.i64("refiner-d-model"));
  rc.max_len = static_cast<int>(o.i64("refiner-max-len"));
  rc.train.epochs = static_cast<int>(o.i64("refiner-epochs"));
  rc.train.max_steps = o.i64("refiner-max-steps");
  rc.train.batch_size = static_cast<int>(o.i64("refiner-batch"));
  rc.train.lr = o.f64("refiner-lr");
  rc.train.optimizer = o.str("refiner-optimizer");
  rc.sampling.temperature = o.f64("temperature");
  rc.sampling.top_k = static_cast<int>(o.i64("top-k"));
  rc.external.host = o.str("refiner-host");
  rc.external.port = static_cast<int>(o.i64("refiner-port"));
  rc.external.path = o.str("refiner-path");
  rc.external.timeout_s = o.f64("refiner-timeout");
  rc.external.temperature = rc.sampling.temperature;
  return rc;
}

void add_eval_opts(Options& o) {
  o.add("subset-size", "1024", "text track: pairs in the one-epoch scoring subset");
  o.add("classifier-epochs", "2", "image track: training epochs per candidate");
  o.add("eval-batch", "32", "candidate training batch size");
  o.add("eval-d-model", "128", "text track: engine width for candidate models");
  o.add("eval-max-len", "96", "text track: maximum sequence length");
  o.add("time-cap", "120", "per-candidate training time cap, seconds");
  o.add("max-params", "64000000", "reject candidates above this parameter count");
  o.add("enforce-ranges", "true", "reject specs outside the generator's search ranges");
}

eval::EvalConfig eval_from(const Options& o) {
  eval::EvalConfig ec;
  ec.subset_size = static_cast<int>(o.i64("subset-size"));
  ec.classifier_epochs = static_cast<int>(o.i64("classifier-epochs"));
  ec.batch_size = static_cast<int>(o.i64("eval-batch"));
  ec.d_model = static_cast<int>(o.i64("eval-d-model"));
  ec.max_len = static_cast<int>(o.i64("eval-max-len"));
  ec.time_cap_s = o.f64("time-cap");
  ec.max_params = o.i64("max-params");
  ec.enforce_ranges = o.flag("enforce-ranges");
  return ec;
}

void add_image_dataset_opts(Options& o) {
  o.add("dataset", "blobs", "image source: blobs | glyphs (synthetic) | idx (files)");
  o.add("images", "", "idx: images file path");
  o.add("labels", "", "idx: labels file path");
  o.add("ds-classes", "10", "synthetic: class count");
  o.add("ds-samples", "6000", "synthetic: total sample count");
  o.add("ds-height", "28", "synthetic: image height");
  o.add("ds-width", "28", "synthetic: image width");
  o.add("ds-noise", "0.1", "synthetic: noise level");
  o.add("ds-shift", "4", "synthetic glyphs: translation jitter, pixels");
  o.add("ds-seed", "0", "synthetic: generation seed");
  o.add("train-count", "4096", "images used for candidate training (the leading block)");
  o.add("eval-count", "1024", "images used for accuracy scoring (the following block)");
}

data::ImageDataset image_dataset_from(const Options& o,
                                      std::map<std::string, std::string>& digests) {
  const std::string& kind = o.str("dataset");
  if (kind == "idx") {
    std::string images = o.required("images"), labels = o.required("labels");
    auto ds = data::load_idx(images, labels);
    digests["images"] = data::file_digest(images);
    digests["labels"] = data::file_digest(labels);
    o.verify_digest("images", digests["images"]);
    o.verify_digest("labels", digests["labels"]);
    return ds;
  }
  data::SynthConfig sc;
  if (kind == "blobs") {
    sc.pattern = data::SynthConfig::Pattern::blobs;
  } else if (kind == "glyphs") {
    sc.pattern = data::SynthConfig::Pattern::glyphs;
  } else {
    throw UsageError("--dataset must be blobs, glyphs, or idx");
  }
  sc.classes = static_cast<int>(o.i64("ds-classes"));
  sc.samples = static_cast<int>(o.i64("ds-samples"));
  sc.height = static_cast<int>(o.i64("ds-height"));
  sc.width = static_cast<int>(o.i64("ds-width"));
  sc.noise = o.f64("ds-noise");
  sc.max_shift = static_cast<int>(o.i64("ds-shift"));
  sc.seed = o.u64("ds-seed");
  auto ds = data::synth_dataset(sc);
  digests["dataset"] = ds.digest;
  o.verify_digest("dataset", ds.digest);
  return ds;
}

std::pair<std::vector<int>, std::vector<int>> split_from(const Options& o,
                                                         const data::ImageDataset& ds) {
  long long train_n = o.i64("train-count"), eval_n = o.i64("eval-count");
  if (train_n < 1 || eval_n < 1) throw UsageError("--train-count and --eval-count must be >= 1");
  if (train_n + eval_n > ds.n) {
    throw std::runtime_error("dataset has " + std::to_string(ds.n) + " images; need " +
                             std::to_string(train_n + eval_n) + " for the train/eval split");
  }
  std::vector<int> train_idx(static_cast<size_t>(train_n)), eval_idx(static_cast<size_t>(eval_n));
  for (long long i = 0; i < train_n; ++i) train_idx[static_cast<size_t>(i)] = static_cast<int>(i);
  for (long long i = 0; i < eval_n; ++i)
    eval_idx[static_cast<size_t>(i)] = static_cast<int>(train_n + i);
  return {std::move(train_idx), std::move(eval_idx)};
}

int workers_from(const Options& o) {
  long long w = o.i64("workers");
  if (w == 0) w = std::max(1u, std::thread::hardware_concurrency());
  if (w < 1) throw UsageError("--workers must be >= 1 (or 0 for one per core)");
  return static_cast<int>(w);
}

std::vector<refine::RefinementPair> load_pairs(const Options& o, const std::string& path,
                                               std::map<std::string, std::string>& digests) {
  auto pairs = refine::read_pairs_file(path, o.i64("limit"));
  digests["pairs"] = data::file_digest(path);
  o.verify_digest("pairs", digests["pairs"]);
  return pairs;
}

// Shared by self-program and program-classifier: announce episodes as they
// finish, then write the run directory (episode log, final spec, metrics).
void attach_progress(loop::LoopConfig& cfg) {
  const char* metric = cfg.track == loop::Track::selfprog ? "loss" : "acc";
  const int total = cfg.n_episodes;
  cfg.on_episode = [metric, total](const loop::EpisodeLog& log) {
    std::ostringstream line;
    line << "[episode " << log.episode << "/" << total << "] ";
    if (!log.refiner_error.empty()) line << "refiner failed (" << log.refiner_error << "); ";
    if (log.adopted_index == loop::kKeepOriginal) {
      line << "kept current spec";
    } else {
      line << "adopted candidate " << log.adopted_index;
    }
    line << "  " << metric << "=" << log.adopted_metric;
    if (log.adopted_param_count) line << "  params=" << *log.adopted_param_count;
    if (log.refiner_steps > 0 && log.refiner_first_loss && log.refiner_last_loss) {
      line << "  refiner_loss=" << *log.refiner_first_loss << "->" << *log.refiner_last_loss
           << " (" << log.refiner_steps << " steps)";
    }
    std::cerr << line.str() << "\n";
  };
}

std::vector<std::string> write_run_dir(const std::string& out_dir, const loop::LoopResult& res) {
  fs::create_directories(out_dir);
  std::vector<std::string> outputs;
  loop::write_episode_logs((fs::path(out_dir) / "episodes.jsonl").string(), res.episodes);
  outputs.push_back("episodes.jsonl");
  spill((fs::path(out_dir) / "final_spec.txt").string(), res.final_spec);
  outputs.push_back("final_spec.txt");
  if (!res.episodes.empty()) {
    metrics::emit_metrics(res.episodes, out_dir);
    outputs.push_back("design_params.csv");
    outputs.push_back("loss_curves.csv");
    outputs.push_back("param_counts.csv");
  }
  return outputs;
}

void digest_outputs(const std::string& out_dir, const std::vector<std::string>& outputs,
                    std::map<std::string, std::string>& digests) {
  for (const auto& name : outputs)
    digests[name] = data::file_digest((fs::path(out_dir) / name).string());
}

// Parses "candidates=2,4,8" / "candidates=2,4;episodes=1,2" sweep axes.
std::map<std::string, std::vector<int>> parse_sweep(const std::string& text) {
  std::map<std::string, std::vector<int>> axes;
  std::string token;
  std::stringstream ss(text);
  while (std::getline(ss, token, ';')) {
    if (token.empty()) continue;
    size_t eq = token.find('=');
    if (eq == std::string::npos)
      throw UsageError("--sweep: expected axis=v1,v2,... in '" + token + "'");
    std::string axis = token.substr(0, eq);
    if (axis != "candidates" && axis != "episodes")
      throw UsageError("--sweep: unknown axis '" + axis + "' (use candidates or episodes)");
    if (axes.count(axis)) throw UsageError("--sweep: axis '" + axis + "' given twice");
    std::vector<int> values;
    std::stringstream vs(token.substr(eq + 1));
    std::string v;
    while (std::getline(vs, v, ',')) {
      int out = 0;
      auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
      if (ec != std::errc{} || ptr != v.data() + v.size() || out < 0)
        throw UsageError("--sweep: bad value '" + v + "' for axis " + axis);
      values.push_back(out);
    }
    if (values.empty()) throw UsageError("--sweep: axis '" + axis + "' has no values");
    axes[axis] = std::move(values);
  }
  return axes;
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------
void cmd_gen_dataset(Options& o) {
  o.resolve("gen-dataset");
  dsl::Family family;
  if (o.str("family") == "transformer") {
    family = dsl::Family::transformer;
  } else if (o.str("family") == "cnn") {
    family = dsl::Family::cnn;
  } else {
    throw UsageError("--family must be transformer or cnn");
  }
  long long count = o.i64("count");
  if (count < 0) throw UsageError("--count must be >= 0");
  std::string out = o.required("out");

  refine::GenOptions gen;
  gen.d_model = static_cast<int>(o.i64("gen-d-model"));
  gen.input_h = static_cast<int>(o.i64("gen-height"));
  gen.input_w = static_cast<int>(o.i64("gen-width"));
  gen.input_c = static_cast<int>(o.i64("gen-channels"));
  gen.num_classes = static_cast<int>(o.i64("gen-classes"));

  std::ofstream os(out, std::ios::binary);
  if (!os) throw SaveError("cannot open for writing: " + out);
  refine::generate_dataset(family, count, o.u64("seed"), os, gen);
  os.flush();
  if (!os) throw SaveError("write failed: " + out);
  std::cerr << "wrote " << count << " pairs to " << out << "\n";

  std::map<std::string, std::string> digests{{"out", data::file_digest(out)}};
  write_manifest(o, "gen-dataset", o.manifest_out(out + ".manifest.json"), digests, {out});
}

void cmd_train_refiner(Options& o) {
  o.resolve("train-refiner");
  std::string pairs_path = o.required("pairs");
  std::string out = o.required("out");
  std::map<std::string, std::string> digests;
  auto pairs = load_pairs(o, pairs_path, digests);
  if (pairs.empty()) throw std::runtime_error("no pairs in " + pairs_path);

  std::string arch = o.str("spec").empty() ? loop::default_selfprog_spec() : slurp(o.str("spec"));
  if (!o.str("spec").empty()) {
    digests["spec"] = data::file_digest(o.str("spec"));
    o.verify_digest("spec", digests["spec"]);
  }
  nn::Seq2SeqConfig mc;
  mc.d_model = static_cast<int>(o.i64("d-model"));
  mc.max_len = static_cast<int>(o.i64("max-len"));
  auto parsed = dsl::parse(arch, {.d_model = mc.d_model});
  if (!parsed.ok() || parsed.spec->family() != dsl::Family::transformer) {
    throw std::runtime_error("refiner spec is not a valid text-model spec" +
                             (parsed.ok() ? std::string() : ": " + parsed.error->message));
  }

  const uint64_t seed = o.u64("seed");
  auto model = nn::build_seq2seq<float>(parsed.spec->transformer(), mc,
                                        mix64(seed ^ fnv1a64("refiner-init")));
  nn::TrainConfig tc;
  tc.optimizer = o.str("optimizer");
  tc.lr = o.f64("lr");
  tc.batch_size = static_cast<int>(o.i64("batch"));
  tc.epochs = static_cast<int>(o.i64("epochs"));
  tc.max_steps = o.i64("max-steps");
  tc.seed = mix64(seed ^ fnv1a64("refiner-train"));
  std::cerr << "training on " << pairs.size() << " pairs (d_model=" << mc.d_model << ")\n";
  auto report = nn::train_seq2seq(model, pairs, tc);
  for (size_t i = 0; i < report.epoch_losses.size(); ++i)
    std::cerr << "[epoch " << (i + 1) << "/" << tc.epochs << "] loss=" << report.epoch_losses[i]
              << "\n";
  std::cerr << report.steps << " steps total\n";

  refine::save_refiner(out, model);
  digests["out"] = data::file_digest(out);
  write_manifest(o, "train-refiner", o.manifest_out(out + ".manifest.json"), digests, {out});
}

void cmd_self_program(Options& o) {
  o.resolve("self-program");
  std::string out_dir = o.required("out-dir");
  std::map<std::string, std::string> digests;
  auto pairs = load_pairs(o, o.required("pairs"), digests);

  loop::LoopConfig cfg;
  cfg.track = loop::Track::selfprog;
  cfg.n_candidates = static_cast<int>(o.i64("candidates"));
  cfg.n_episodes = static_cast<int>(o.i64("episodes"));
  if (cfg.n_candidates < 1) throw UsageError("--candidates must be >= 1");
  if (cfg.n_episodes < 0) throw UsageError("--episodes must be >= 0");
  cfg.seed = o.u64("seed");
  cfg.workers = workers_from(o);
  if (!o.str("initial-spec").empty()) {
    cfg.initial_spec = slurp(o.str("initial-spec"));
    digests["initial-spec"] = data::file_digest(o.str("initial-spec"));
    o.verify_digest("initial-spec", digests["initial-spec"]);
  }
  cfg.refiner = refiner_from(o);
  cfg.eval = eval_from(o);
  attach_progress(cfg);

  auto res = loop::run_selfprog(cfg, pairs);
  auto outputs = write_run_dir(out_dir, res);
  digest_outputs(out_dir, outputs, digests);
  std::cerr << "final spec -> " << (fs::path(out_dir) / "final_spec.txt").string() << "\n";
  write_manifest(o, "self-program",
                 o.manifest_out((fs::path(out_dir) / "manifest.json").string()), digests,
                 outputs);
}

void cmd_program_classifier(Options& o) {
  o.resolve("program-classifier");
  std::string out_dir = o.required("out-dir");
  std::map<std::string, std::string> digests;
  auto ds = image_dataset_from(o, digests);
  auto [train_idx, eval_idx] = split_from(o, ds);

  std::vector<refine::RefinementPair> refiner_pairs;
  if (!o.str("pairs").empty()) refiner_pairs = load_pairs(o, o.str("pairs"), digests);

  loop::LoopConfig cfg;
  cfg.track = loop::Track::classifier;
  cfg.n_candidates = static_cast<int>(o.i64("candidates"));
  cfg.n_episodes = static_cast<int>(o.i64("episodes"));
  if (cfg.n_candidates < 1) throw UsageError("--candidates must be >= 1");
  if (cfg.n_episodes < 0) throw UsageError("--episodes must be >= 0");
  cfg.seed = o.u64("seed");
  cfg.workers = workers_from(o);
  if (!o.str("initial-spec").empty()) {
    cfg.initial_spec = slurp(o.str("initial-spec"));
    digests["initial-spec"] = data::file_digest(o.str("initial-spec"));
    o.verify_digest("initial-spec", digests["initial-spec"]);
  }
  cfg.refiner = refiner_from(o);
  if (cfg.refiner.backend == loop::Backend::learned && refiner_pairs.empty())
    throw UsageError("--refiner learned needs --pairs (a cnn-family refinement corpus)");
  cfg.eval = eval_from(o);
  cfg.eval.task.h = ds.h;
  cfg.eval.task.w = ds.w;
  cfg.eval.task.c = ds.c;
  cfg.eval.task.classes = ds.class_count;

  auto axes = parse_sweep(o.str("sweep"));
  if (!axes.empty()) {
    auto candidates = axes.count("candidates") ? axes["candidates"]
                                               : std::vector<int>{cfg.n_candidates};
    auto episodes = axes.count("episodes") ? axes["episodes"]
                                           : std::vector<int>{cfg.n_episodes};
    int replicates = static_cast<int>(o.i64("replicates"));
    if (replicates < 1) throw UsageError("--replicates must be >= 1");
    std::cerr << "sweep: " << candidates.size() * episodes.size() << " cells x " << replicates
              << " replicate(s)\n";
    auto cells = loop::run_classifier_sweep(cfg, ds, train_idx, eval_idx, refiner_pairs,
                                            candidates, episodes, replicates);
    fs::create_directories(out_dir);
    std::string sweep_path = (fs::path(out_dir) / "sweep.csv").string();
    metrics::emit_sweep(cells, sweep_path);
    for (const auto& cell : cells) {
      std::cerr << "[cell candidates=" << cell.n_candidates << " episodes=" << cell.n_episodes
                << "] mean_acc=" << cell.mean_metric << "\n";
    }
    digests["sweep.csv"] = data::file_digest(sweep_path);
    write_manifest(o, "program-classifier",
                   o.manifest_out((fs::path(out_dir) / "manifest.json").string()), digests,
                   {"sweep.csv"});
    return;
  }

  attach_progress(cfg);
  auto res = loop::run_classifier_search(cfg, ds, train_idx, eval_idx, refiner_pairs);
  auto outputs = write_run_dir(out_dir, res);
  digest_outputs(out_dir, outputs, digests);
  std::cerr << "final spec -> " << (fs::path(out_dir) / "final_spec.txt").string() << "\n";
  write_manifest(o, "program-classifier",
                 o.manifest_out((fs::path(out_dir) / "manifest.json").string()), digests,
                 outputs);
}

void cmd_eval_spec(Options& o) {
  o.resolve("eval-spec");
  std::string spec_path = o.required("spec");
  std::string out = o.required("out");
  auto track = loop::track_from_name(o.str("track"));
  if (!track) throw UsageError("--track must be selfprog or classifier");

  std::map<std::string, std::string> digests;
  std::string text = slurp(spec_path);
  digests["spec"] = data::file_digest(spec_path);
  o.verify_digest("spec", digests["spec"]);

  eval::EvalConfig ec = eval_from(o);
  ec.seed = o.u64("seed");

  eval::CandidateReport report;
  if (*track == loop::Track::selfprog) {
    auto pairs = load_pairs(o, o.required("pairs"), digests);
    report = eval::evaluate_selfprog(text, pairs, ec);
  } else {
    auto ds = image_dataset_from(o, digests);
    auto [train_idx, eval_idx] = split_from(o, ds);
    ec.task.h = ds.h;
    ec.task.w = ds.w;
    ec.task.c = ds.c;
    ec.task.classes = ds.class_count;
    report = eval::evaluate_classifier(text, ds, train_idx, eval_idx, ec);
  }

  spill(out, loop::report_to_json(report).dump(2) + "\n");
  std::cerr << "report -> " << out << "\n";
  digests["out"] = data::file_digest(out);
  write_manifest(o, "eval-spec", o.manifest_out(out + ".manifest.json"), digests, {out});
}

void cmd_emit_metrics(Options& o) {
  o.resolve("emit-metrics");
  std::string episodes_path = o.required("episodes");
  std::string out_dir = o.required("out-dir");

  std::map<std::string, std::string> digests{{"episodes", data::file_digest(episodes_path)}};
  o.verify_digest("episodes", digests["episodes"]);
  auto logs = loop::read_episode_logs(episodes_path);
  metrics::emit_metrics(logs, out_dir);
  std::vector<std::string> outputs{"design_params.csv", "loss_curves.csv", "param_counts.csv"};
  digest_outputs(out_dir, outputs, digests);
  std::cerr << "metrics for " << logs.size() << " episode(s) -> " << out_dir << "\n";
  write_manifest(o, "emit-metrics",
                 o.manifest_out((fs::path(out_dir) / "manifest.json").string()), digests,
                 outputs);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Greedy spec-rewriting search: a seq2seq refiner proposes one-edit\n"
      "rewrites of a model spec, each candidate is trained briefly and scored,\n"
      "and the best rewrite is adopted episode after episode."};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-dataset", "Sample a refinement-pair corpus to JSONL");
  Options& og = make_options(gen);
  og.add("family", "transformer", "spec family to sample: transformer | cnn");
  og.add("count", "50000", "number of pairs");
  og.add("seed", "0", "generation seed");
  og.add("out", "", "output JSONL path (required)");
  og.add("gen-d-model", "512", "transformer: engine width recorded with each spec");
  og.add("gen-height", "28", "cnn: task input height");
  og.add("gen-width", "28", "cnn: task input width");
  og.add("gen-channels", "1", "cnn: task input channels");
  og.add("gen-classes", "10", "cnn: task class count");
  gen->callback([&og] { cmd_gen_dataset(og); });

  auto* tr = app.add_subcommand("train-refiner",
                                "Train a seq2seq refiner on a pair corpus and save a checkpoint");
  Options& ot = make_options(tr);
  ot.add("pairs", "", "training corpus JSONL (required)");
  ot.add("limit", "0", "read at most this many pairs (0 = all)");
  ot.add("out", "", "checkpoint output path (required)");
  ot.add("spec", "", "text-model spec file for the refiner (default: built-in)");
  ot.add("d-model", "128", "embedding width");
  ot.add("max-len", "96", "maximum sequence length");
  ot.add("epochs", "3", "training epochs");
  ot.add("max-steps", "0", "cap on training steps (0 = none)");
  ot.add("batch", "32", "batch size");
  ot.add("lr", "0.001", "learning rate");
  ot.add("optimizer", "adam", "adam | sgd");
  ot.add("seed", "0", "run seed (derives init and training streams)");
  tr->callback([&ot] { cmd_train_refiner(ot); });

  auto* sp = app.add_subcommand(
      "self-program", "Run the loop in which the evolving spec defines its own refiner");
  Options& os = make_options(sp);
  os.add("pairs", "", "refinement corpus JSONL: refiner training + scoring subset (required)");
  os.add("limit", "0", "read at most this many pairs (0 = all)");
  os.add("out-dir", "", "run output directory (required)");
  os.add("episodes", "10", "number of episodes");
  os.add("candidates", "8", "candidates per episode");
  os.add("seed", "0", "run seed; every stream in the run derives from it");
  os.add("workers", "0", "parallel candidate evaluations (0 = one per core)");
  os.add("initial-spec", "", "starting spec file (default: built-in text model)");
  add_refiner_opts(os);
  add_eval_opts(os);
  sp->callback([&os] { cmd_self_program(os); });

  auto* pc = app.add_subcommand("program-classifier",
                                "Run the loop that programs an image classifier");
  Options& op = make_options(pc);
  op.add("out-dir", "", "run output directory (required)");
  op.add("episodes", "5", "number of episodes");
  op.add("candidates", "8", "candidates per episode");
  op.add("seed", "0", "run seed; every stream in the run derives from it");
  op.add("workers", "0", "parallel candidate evaluations (0 = one per core)");
  op.add("initial-spec", "", "starting spec file (default: one 16-neuron hidden layer)");
  op.add("pairs", "", "cnn-family corpus for the learned refiner (optional otherwise)");
  op.add("limit", "0", "read at most this many pairs (0 = all)");
  op.add("sweep", "", "grid axes, e.g. \"candidates=2,4,8,16\" or \"candidates=2,4;episodes=1,2\"");
  op.add("replicates", "1", "sweep: seeds averaged per cell");
  add_image_dataset_opts(op);
  add_refiner_opts(op);
  add_eval_opts(op);
  pc->callback([&op] { cmd_program_classifier(op); });

  auto* ev = app.add_subcommand("eval-spec", "Score one spec text exactly as the loop would");
  Options& oe = make_options(ev);
  oe.add("spec", "", "spec file to evaluate (required)");
  oe.add("track", "selfprog", "scoring track: selfprog | classifier");
  oe.add("out", "", "report JSON output path (required)");
  oe.add("seed", "0", "run seed the candidate seed derives from");
  oe.add("pairs", "", "selfprog: scoring corpus JSONL");
  oe.add("limit", "0", "read at most this many pairs (0 = all)");
  add_image_dataset_opts(oe);
  add_eval_opts(oe);
  ev->callback([&oe] { cmd_eval_spec(oe); });

  auto* em = app.add_subcommand("emit-metrics", "Turn an episode log into CSV metrics");
  Options& om = make_options(em);
  om.add("episodes", "", "episodes.jsonl path (required)");
  om.add("out-dir", "", "CSV output directory (required)");
  em->callback([&om] { cmd_emit_metrics(om); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e), 0;
  } catch (const CLI::ParseError& e) {
    return app.exit(e), 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
