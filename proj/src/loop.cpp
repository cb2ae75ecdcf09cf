#include "respec/loop.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "respec/dsl.hpp"
#include "respec/errors.hpp"
#include "respec/rng.hpp"
#include "respec/seq2seq.hpp"

namespace respec::loop {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

uint64_t sub_seed(uint64_t base, std::string_view label) { return mix64(base ^ fnv1a64(label)); }

// The candidate's scoring metric for the track, NaN when it has none.
double report_metric(Track track, const eval::CandidateReport& r) {
  const std::optional<double>& m = track == Track::selfprog ? r.fewshot_loss : r.accuracy;
  return m.has_value() ? *m : kNaN;
}

dsl::ParseOptions parse_opts(const LoopConfig& cfg) { return {.d_model = cfg.eval.d_model}; }

}  // namespace

std::string_view track_name(Track t) {
  return t == Track::selfprog ? "selfprog" : "classifier";
}

std::optional<Track> track_from_name(std::string_view name) {
  if (name == "selfprog") return Track::selfprog;
  if (name == "classifier") return Track::classifier;
  return std::nullopt;
}

std::string_view backend_name(Backend b) {
  switch (b) {
    case Backend::oracle: return "oracle";
    case Backend::learned: return "learned";
    case Backend::external: return "external";
  }
  return "oracle";
}

std::optional<Backend> backend_from_name(std::string_view name) {
  if (name == "oracle") return Backend::oracle;
  if (name == "learned") return Backend::learned;
  if (name == "external") return Backend::external;
  return std::nullopt;
}

nn::TrainConfig default_refiner_train() {
  nn::TrainConfig t;
  t.epochs = 3;
  return t;
}

std::string default_selfprog_spec() { return dsl::make_spec(dsl::TransformerSpec{}).source_text; }

std::string default_classifier_spec(const nn::TaskShape& task) {
  dsl::CnnSpec spec;
  spec.input_h = task.h;
  spec.input_w = task.w;
  spec.input_c = task.c;
  spec.channels = {};
  spec.pool_after_convs = false;
  spec.hidden_sizes = {16};
  spec.num_classes = task.classes;
  return dsl::make_spec(std::move(spec)).source_text;
}

int select_best(Track track, double original_metric,
                const std::vector<eval::CandidateReport>& reports) {
  const bool lower_wins = track == Track::selfprog;
  int best = kKeepOriginal;
  double best_metric = 0;
  for (int i = 0; i < static_cast<int>(reports.size()); ++i) {
    const double m = report_metric(track, reports[i]);
    if (std::isnan(m)) continue;
    if (best == kKeepOriginal || (lower_wins ? m < best_metric : m > best_metric)) {
      best = i;
      best_metric = m;
    }
  }
  if (best == kKeepOriginal) return kKeepOriginal;
  // A candidate that ties the original replaces it; a NaN original (an
  // unscoreable current spec) never outranks a valid candidate because the
  // comparison below is false for NaN.
  const bool strictly_worse =
      lower_wins ? best_metric > original_metric : best_metric < original_metric;
  return strictly_worse ? kKeepOriginal : best;
}

namespace {

struct ProposalOutcome {
  std::vector<std::string> candidates;
  std::optional<double> first_loss, last_loss;
  long long steps = 0;
  std::string error;
};

// One episode's proposal step. Never throws: a refiner that cannot produce
// candidates (failed build, diverged training, unreachable server) yields n
// empty strings, which downstream evaluation marks invalid, so the episode
// falls back to keeping the current spec.
ProposalOutcome propose(const LoopConfig& cfg, const std::string& current,
                        const std::vector<refine::RefinementPair>& corpus,
                        uint64_t episode_seed) {
  ProposalOutcome out;
  const uint64_t sample_seed = sub_seed(episode_seed, "sample");
  try {
    switch (cfg.refiner.backend) {
      case Backend::oracle: {
        refine::OracleRefiner r;
        out.candidates = r.refine(current, cfg.n_candidates, sample_seed);
        return out;
      }
      case Backend::external: {
        refine::ExternalRefiner r(cfg.refiner.external);
        out.candidates = r.refine(current, cfg.n_candidates, sample_seed);
        return out;
      }
      case Backend::learned: {
        // Self-programming trains the architecture the current spec
        // describes; the classifier track keeps the default text model,
        // since a classifier spec cannot describe a text model.
        const std::string arch_text =
            cfg.track == Track::selfprog ? current : default_selfprog_spec();
        nn::Seq2SeqConfig mc;
        mc.d_model = cfg.refiner.d_model;
        mc.max_len = cfg.refiner.max_len;
        auto parsed = dsl::parse(arch_text, {.d_model = mc.d_model});
        if (!parsed.ok() || parsed.spec->family() != dsl::Family::transformer)
          throw BuildError("refiner spec is not a valid text-model spec");
        auto model = nn::build_seq2seq<float>(parsed.spec->transformer(), mc,
                                              sub_seed(episode_seed, "refiner-init"));
        nn::TrainConfig tc = cfg.refiner.train;
        tc.seed = sub_seed(episode_seed, "refiner-train");
        auto report = nn::train_seq2seq(model, corpus, tc);
        out.steps = report.steps;
        if (!report.step_losses.empty()) {
          out.first_loss = report.step_losses.front();
          out.last_loss = report.step_losses.back();
        }
        refine::LearnedRefiner sampler(std::move(model), cfg.refiner.sampling);
        out.candidates = sampler.refine(current, cfg.n_candidates, sample_seed);
        return out;
      }
    }
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  out.candidates.assign(static_cast<size_t>(cfg.n_candidates), "");
  return out;
}

void validate_common(const LoopConfig& cfg) {
  if (cfg.n_candidates < 1) throw std::invalid_argument("n_candidates must be at least 1");
  if (cfg.n_episodes < 0) throw std::invalid_argument("n_episodes must not be negative");
  if (cfg.workers < 1) throw std::invalid_argument("workers must be at least 1");
}

template <typename EvalBatch>
LoopResult run_episodes(const LoopConfig& cfg, const std::string& initial,
                        const std::vector<refine::RefinementPair>& refiner_corpus,
                        EvalBatch&& evaluate) {
  eval::EvalService service(cfg.workers);
  LoopResult out;
  out.episodes.reserve(static_cast<size_t>(cfg.n_episodes));
  std::string current = initial;

  for (int e = 1; e <= cfg.n_episodes; ++e) {
    EpisodeLog log;
    log.episode = e;
    log.seed = mix64(cfg.seed ^ mix64(static_cast<uint64_t>(e)));

    auto proposal = propose(cfg, current, refiner_corpus, log.seed);
    log.refiner_first_loss = proposal.first_loss;
    log.refiner_last_loss = proposal.last_loss;
    log.refiner_steps = proposal.steps;
    log.refiner_error = std::move(proposal.error);

    // The current spec's own score is the bar candidates must clear; the
    // service cache makes this free after the first episode it appears in.
    log.original = evaluate(service, std::vector<std::string>{current})[0];
    const double original_metric = report_metric(cfg.track, log.original);

    log.reports = evaluate(service, proposal.candidates);
    log.adopted_index = select_best(cfg.track, original_metric, log.reports);

    const eval::CandidateReport& winner =
        log.adopted_index == kKeepOriginal ? log.original
                                           : log.reports[static_cast<size_t>(log.adopted_index)];
    log.adopted_spec = log.adopted_index == kKeepOriginal ? current : winner.candidate_text;
    log.adopted_metric = report_metric(cfg.track, winner);
    log.adopted_param_count = winner.param_count;

    auto parsed = dsl::parse(log.adopted_spec, parse_opts(cfg));
    if (parsed.ok()) log.design_params = dsl::design_params(*parsed.spec);

    current = log.adopted_spec;
    out.episodes.push_back(std::move(log));
    if (cfg.on_episode) cfg.on_episode(out.episodes.back());
  }
  out.final_spec = current;
  return out;
}

}  // namespace

LoopResult run_selfprog(const LoopConfig& cfg, const std::vector<refine::RefinementPair>& pairs) {
  LoopConfig c = cfg;
  c.track = Track::selfprog;
  c.eval.seed = c.seed;
  validate_common(c);
  if (static_cast<int>(pairs.size()) < c.eval.subset_size)
    throw std::invalid_argument("refinement corpus is smaller than the evaluation subset");

  std::string initial = c.initial_spec.empty() ? default_selfprog_spec() : c.initial_spec;
  auto parsed = dsl::parse(initial, parse_opts(c));
  if (!parsed.ok() || parsed.spec->family() != dsl::Family::transformer)
    throw std::invalid_argument("initial spec is not a valid text-model spec: " +
                                (parsed.ok() ? "wrong family" : parsed.error->message));
  initial = parsed.spec->source_text;

  return run_episodes(c, initial, pairs,
                      [&](eval::EvalService& svc, const std::vector<std::string>& texts) {
                        return svc.selfprog_batch(texts, pairs, c.eval);
                      });
}

LoopResult run_classifier_search(const LoopConfig& cfg, const data::ImageDataset& ds,
                                 const std::vector<int>& train_idx,
                                 const std::vector<int>& eval_idx,
                                 const std::vector<refine::RefinementPair>& refiner_pairs) {
  LoopConfig c = cfg;
  c.track = Track::classifier;
  c.eval.seed = c.seed;
  validate_common(c);
  if (c.refiner.backend == Backend::learned && refiner_pairs.empty())
    throw std::invalid_argument("a learned refiner needs a non-empty refinement corpus");

  std::string initial = c.initial_spec.empty() ? default_classifier_spec(c.eval.task)
                                               : c.initial_spec;
  auto parsed = dsl::parse(initial, parse_opts(c));
  if (!parsed.ok() || parsed.spec->family() != dsl::Family::cnn)
    throw std::invalid_argument("initial spec is not a valid classifier spec: " +
                                (parsed.ok() ? "wrong family" : parsed.error->message));
  initial = parsed.spec->source_text;

  return run_episodes(c, initial, refiner_pairs,
                      [&](eval::EvalService& svc, const std::vector<std::string>& texts) {
                        return svc.classifier_batch(texts, ds, train_idx, eval_idx, c.eval);
                      });
}

std::vector<SweepCell> run_classifier_sweep(
    const LoopConfig& base, const data::ImageDataset& ds, const std::vector<int>& train_idx,
    const std::vector<int>& eval_idx, const std::vector<refine::RefinementPair>& refiner_pairs,
    const std::vector<int>& candidate_counts, const std::vector<int>& episode_counts,
    int replicates) {
  if (replicates < 1) throw std::invalid_argument("replicates must be at least 1");
  if (candidate_counts.empty() || episode_counts.empty())
    throw std::invalid_argument("the sweep grid must have at least one cell");
  std::vector<SweepCell> cells;
  for (int n : candidate_counts) {
    for (int episodes : episode_counts) {
      SweepCell cell;
      cell.n_candidates = n;
      cell.n_episodes = episodes;
      cell.replicates = replicates;
      cell.total_candidates = static_cast<long long>(n) * episodes;
      double sum = 0;
      for (int r = 0; r < replicates; ++r) {
        LoopConfig cfg = base;
        cfg.n_candidates = n;
        cfg.n_episodes = episodes;
        cfg.seed = mix64(base.seed ^ mix64(static_cast<uint64_t>(r)));
        auto result = run_classifier_search(cfg, ds, train_idx, eval_idx, refiner_pairs);
        sum += result.episodes.empty() ? std::numeric_limits<double>::quiet_NaN()
                                       : result.episodes.back().adopted_metric;
      }
      cell.mean_metric = sum / replicates;
      cells.push_back(cell);
    }
  }
  return cells;
}

// ---------------------------------------------------------------------------
// Episode log serialization
// ---------------------------------------------------------------------------

namespace {

const char* stage_state_name(eval::StageResult::State s) {
  switch (s) {
    case eval::StageResult::State::ok: return "ok";
    case eval::StageResult::State::error: return "error";
    case eval::StageResult::State::skipped: return "skipped";
  }
  return "skipped";
}

eval::StageResult::State stage_state_from(const std::string& name) {
  if (name == "ok") return eval::StageResult::State::ok;
  if (name == "error") return eval::StageResult::State::error;
  if (name == "skipped") return eval::StageResult::State::skipped;
  throw LoadError(LoadError::Kind::malformed, "unknown stage state: " + name);
}

nlohmann::json stage_to_json(const eval::StageResult& s) {
  return {{"detail", s.detail}, {"state", stage_state_name(s.state)}};
}

eval::StageResult stage_from_json(const nlohmann::json& j) {
  eval::StageResult s;
  s.state = stage_state_from(j.at("state").get<std::string>());
  s.detail = j.at("detail").get<std::string>();
  return s;
}

nlohmann::json opt_double_to_json(const std::optional<double>& v) {
  if (!v.has_value()) return nullptr;
  return *v;
}

std::optional<double> opt_double_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

// Wall time is deliberately left out: it is the one non-deterministic field,
// and these records must replay byte-for-byte.
nlohmann::json report_to_json(const eval::CandidateReport& r) {
  nlohmann::json j{{"accuracy", opt_double_to_json(r.accuracy)},
                   {"build", stage_to_json(r.build_status)},
                   {"fewshot_loss", opt_double_to_json(r.fewshot_loss)},
                   {"parse", stage_to_json(r.parse_status)},
                   {"step_losses", r.step_losses},
                   {"text", r.candidate_text},
                   {"train", stage_to_json(r.train_status)}};
  j["param_count"] = r.param_count.has_value() ? nlohmann::json(*r.param_count) : nullptr;
  return j;
}

eval::CandidateReport report_from_json(const nlohmann::json& j) {
  eval::CandidateReport r;
  r.candidate_text = j.at("text").get<std::string>();
  r.parse_status = stage_from_json(j.at("parse"));
  r.build_status = stage_from_json(j.at("build"));
  r.train_status = stage_from_json(j.at("train"));
  r.fewshot_loss = opt_double_from_json(j.at("fewshot_loss"));
  r.accuracy = opt_double_from_json(j.at("accuracy"));
  if (!j.at("param_count").is_null()) r.param_count = j.at("param_count").get<int64_t>();
  r.step_losses = j.at("step_losses").get<std::vector<float>>();
  return r;
}

nlohmann::json episode_to_json(const EpisodeLog& log) {
  nlohmann::json reports = nlohmann::json::array();
  for (const auto& r : log.reports) reports.push_back(report_to_json(r));
  nlohmann::json j{{"adopted_index", log.adopted_index},
                   {"adopted_metric", std::isnan(log.adopted_metric)
                                          ? nlohmann::json(nullptr)
                                          : nlohmann::json(log.adopted_metric)},
                   {"adopted_spec", log.adopted_spec},
                   {"design_params", log.design_params},
                   {"episode", log.episode},
                   {"original", report_to_json(log.original)},
                   {"refiner_error", log.refiner_error},
                   {"refiner_first_loss", opt_double_to_json(log.refiner_first_loss)},
                   {"refiner_last_loss", opt_double_to_json(log.refiner_last_loss)},
                   {"refiner_steps", log.refiner_steps},
                   {"reports", std::move(reports)},
                   {"seed", log.seed}};
  j["adopted_param_count"] =
      log.adopted_param_count.has_value() ? nlohmann::json(*log.adopted_param_count) : nullptr;
  return j;
}

EpisodeLog episode_from_json(const nlohmann::json& j) {
  try {
    EpisodeLog log;
    log.episode = j.at("episode").get<int>();
    log.seed = j.at("seed").get<uint64_t>();
    log.adopted_index = j.at("adopted_index").get<int>();
    log.adopted_metric = j.at("adopted_metric").is_null()
                             ? std::numeric_limits<double>::quiet_NaN()
                             : j.at("adopted_metric").get<double>();
    log.adopted_spec = j.at("adopted_spec").get<std::string>();
    if (!j.at("adopted_param_count").is_null())
      log.adopted_param_count = j.at("adopted_param_count").get<int64_t>();
    log.design_params = j.at("design_params").get<std::map<std::string, double>>();
    log.original = report_from_json(j.at("original"));
    for (const auto& rj : j.at("reports")) log.reports.push_back(report_from_json(rj));
    log.refiner_first_loss = opt_double_from_json(j.at("refiner_first_loss"));
    log.refiner_last_loss = opt_double_from_json(j.at("refiner_last_loss"));
    log.refiner_steps = j.at("refiner_steps").get<long long>();
    log.refiner_error = j.at("refiner_error").get<std::string>();
    return log;
  } catch (const LoadError&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(LoadError::Kind::malformed, std::string("bad episode record: ") + e.what());
  }
}

void write_episode_logs(const std::string& path, const std::vector<EpisodeLog>& logs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw SaveError("cannot open for writing: " + path);
  for (const auto& log : logs) out << episode_to_json(log).dump() << '\n';
  out.flush();
  if (!out) throw SaveError("write failed: " + path);
}

std::vector<EpisodeLog> read_episode_logs(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(LoadError::Kind::io, "cannot open: " + path);
  std::vector<EpisodeLog> logs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw LoadError(LoadError::Kind::malformed,
                      "episode log line " + std::to_string(logs.size() + 1) + " is not JSON");
    logs.push_back(episode_from_json(j));
  }
  return logs;
}

}  // namespace respec::loop
