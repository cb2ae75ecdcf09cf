#pragma once

// The search loop: each episode trains/queries a refiner for n candidate
// rewrites of the current spec text, scores every candidate, and greedily
// adopts the best one. The current spec survives an episode only when no
// valid candidate ties or beats its metric, so the adopted metric can never
// get worse under a fixed evaluation subset and seed.
//
// Two tracks share the loop body:
//   selfprog   - the evolving spec IS the refiner architecture; candidates
//                are scored by one-epoch training loss on refinement pairs
//                (lower wins).
//   classifier - the evolving spec is an image classifier; candidates are
//                scored by eval-subset accuracy (higher wins). With a
//                learned backend the refiner keeps the default transformer
//                architecture, since a classifier spec cannot describe one.
//
// Only the spec text survives between episodes; every model (refiner and
// candidates alike) is initialized fresh from seeds derived off the run
// seed. Replaying a config therefore reproduces every decision bit-for-bit.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "respec/data_io.hpp"
#include "respec/evaluate.hpp"
#include "respec/refiner.hpp"

namespace respec::loop {

// select_best returns this when every valid candidate is strictly worse than
// the current spec's metric, or when no candidate is valid at all.
inline constexpr int kKeepOriginal = -1;

enum class Track { selfprog, classifier };

std::string_view track_name(Track t);
std::optional<Track> track_from_name(std::string_view name);

enum class Backend { oracle, learned, external };

std::string_view backend_name(Backend b);
std::optional<Backend> backend_from_name(std::string_view name);

nn::TrainConfig default_refiner_train();  // adam, batch 32, 3 epochs

struct EpisodeLog;

struct RefinerConfig {
  Backend backend = Backend::oracle;

  // Learned backend: engine size of the per-episode refiner model and its
  // training budget over the refinement corpus. seed/shuffle in `train` are
  // overwritten per episode.
  int d_model = 128;
  int max_len = 96;
  nn::TrainConfig train = default_refiner_train();
  nn::SamplingConfig sampling;

  // External backend: where to POST refinement requests.
  refine::ExternalConfig external;
};

struct LoopConfig {
  Track track = Track::selfprog;
  int n_candidates = 8;
  int n_episodes = 10;  // classifier runs conventionally use 5
  std::string initial_spec;  // empty = track default (see default_*_spec)
  uint64_t seed = 0;
  int workers = 1;  // parallel candidate evaluations within an episode
  RefinerConfig refiner;
  // Harness settings. eval.seed is ignored: the run seed governs evaluation
  // so that one knob controls the whole run.
  eval::EvalConfig eval;
  // Observer called after each episode completes (progress reporting). Plays
  // no part in the run's outcome and is not serialized.
  std::function<void(const EpisodeLog&)> on_episode;
};

struct EpisodeLog {
  int episode = 0;    // 1-based
  uint64_t seed = 0;  // episode-level seed all per-episode streams derive from

  // Outcome of the greedy selection.
  int adopted_index = kKeepOriginal;  // winning candidate, or kKeepOriginal
  std::string adopted_spec;
  double adopted_metric = 0;  // loss (selfprog) or accuracy (classifier)
  std::optional<int64_t> adopted_param_count;
  std::map<std::string, double> design_params;  // adopted spec's knobs

  // The current spec's own evaluation — the bar candidates had to clear.
  // Together with `reports` it makes every selection replayable from the log.
  eval::CandidateReport original;

  // One report per candidate, in proposal order.
  std::vector<eval::CandidateReport> reports;

  // Refiner training trace (learned backend only; empty curve otherwise).
  std::optional<double> refiner_first_loss;
  std::optional<double> refiner_last_loss;
  long long refiner_steps = 0;
  std::string refiner_error;  // non-empty if the refiner failed this episode
};

struct LoopResult {
  std::string final_spec;
  std::vector<EpisodeLog> episodes;  // exactly n_episodes entries
};

// Canonical starting points: a 2+2-layer, 8-head, d_ff=1024 transformer for
// the self-programming track; a single 16-neuron hidden layer for the
// classifier track, shaped to the task.
std::string default_selfprog_spec();
std::string default_classifier_spec(const nn::TaskShape& task);

// Greedy selection rule, pure in its inputs. Picks the index of the best
// valid candidate (lowest loss / highest accuracy; ties break to the lowest
// index) unless every valid candidate is strictly worse than
// original_metric, or none is valid — then kKeepOriginal. A NaN or missing
// candidate metric never wins; a NaN original_metric never beats a valid
// candidate.
int select_best(Track track, double original_metric,
                const std::vector<eval::CandidateReport>& reports);

// Runs the self-programming track: the current spec defines the refiner that
// proposes its successor. `pairs` is both the refiner's training corpus and
// the evaluation subset source; it must hold at least eval.subset_size
// entries. Throws std::invalid_argument on a bad config (unparseable initial
// spec, n_candidates < 1, n_episodes < 0, corpus too small).
LoopResult run_selfprog(const LoopConfig& cfg,
                        const std::vector<refine::RefinementPair>& pairs);

// Runs the classifier-programming track on a fixed train/eval split.
// `refiner_pairs` is the learned backend's training corpus (typically
// cnn-family pairs); it may be empty for oracle/external backends. Subset
// preconditions mirror evaluate_classifier.
LoopResult run_classifier_search(const LoopConfig& cfg, const data::ImageDataset& ds,
                                 const std::vector<int>& train_idx,
                                 const std::vector<int>& eval_idx,
                                 const std::vector<refine::RefinementPair>& refiner_pairs);

// One cell of the candidates-vs-episodes grid: the classifier search run at
// (n_candidates, n_episodes), averaged over `replicates` seeds.
struct SweepCell {
  int n_candidates = 0;
  int n_episodes = 0;
  int replicates = 1;
  long long total_candidates = 0;  // n_candidates * n_episodes
  double mean_metric = 0;          // mean final adopted accuracy
};

// Runs the full grid of candidate_counts x episode_counts classifier
// searches off one base config. Replicate r of a cell uses seed
// mix64(base.seed ^ mix64(r)); within one replicate every cell shares its
// seed, so a cell with more candidates sees the smaller cell's proposals as
// a prefix of its own.
std::vector<SweepCell> run_classifier_sweep(
    const LoopConfig& base, const data::ImageDataset& ds, const std::vector<int>& train_idx,
    const std::vector<int>& eval_idx, const std::vector<refine::RefinementPair>& refiner_pairs,
    const std::vector<int>& candidate_counts, const std::vector<int>& episode_counts,
    int replicates = 1);

// Episode logs serialize one JSON object per line, with sorted keys and no
// wall-clock fields, so a replayed run writes byte-identical files.
nlohmann::json report_to_json(const eval::CandidateReport& r);
eval::CandidateReport report_from_json(const nlohmann::json& j);
nlohmann::json episode_to_json(const EpisodeLog& log);
EpisodeLog episode_from_json(const nlohmann::json& j);  // throws LoadError(malformed)
void write_episode_logs(const std::string& path, const std::vector<EpisodeLog>& logs);
std::vector<EpisodeLog> read_episode_logs(const std::string& path);

}  // namespace respec::loop
