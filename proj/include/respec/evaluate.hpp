#pragma once

// Candidate scoring: every byte string gets a report, never an exception.
// A candidate advances through parse -> build -> train; the first failed
// stage is recorded and later stages stay skipped, so a report never carries
// metrics from beyond a failure.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "respec/cnn.hpp"
#include "respec/data_io.hpp"
#include "respec/mutation.hpp"

namespace respec::eval {

struct StageResult {
  enum class State { skipped, ok, error };
  State state = State::skipped;
  std::string detail;  // non-empty iff state == error

  bool ok() const { return state == State::ok; }
  bool failed() const { return state == State::error; }
};

struct CandidateReport {
  std::string candidate_text;
  StageResult parse_status;
  StageResult build_status;
  StageResult train_status;

  // Scoring metric: exactly one is set on full success, depending on track.
  std::optional<double> fewshot_loss;  // text track: avg per-step loss, lower wins
  std::optional<double> accuracy;      // image track: eval accuracy, higher wins

  std::optional<int64_t> param_count;  // set once the model builds
  std::vector<float> step_losses;      // candidate training curve
  double wall_time_s = 0;              // measured; informational only

  bool valid() const { return fewshot_loss.has_value() || accuracy.has_value(); }
};

struct EvalConfig {
  // Text track: one epoch over the leading subset_size pairs, in file order.
  int subset_size = 1024;
  int batch_size = 32;

  // Image track.
  int classifier_epochs = 2;
  nn::TaskShape task;  // input shape + class count the candidate must fit

  // Engine settings for the model a text candidate defines.
  int d_model = 128;
  int max_len = 96;

  // Guards; a candidate that trips one becomes a failed report, not a crash.
  double time_cap_s = 120.0;
  int64_t max_params = 64'000'000;
  bool enforce_ranges = true;  // reject specs outside the generator's ranges

  uint64_t seed = 0;  // run-level; each candidate derives its own from this
};

// Deterministic per-candidate seed: same run seed + same text => same seed,
// which is what makes repeat evaluations (and the cache) coherent.
uint64_t candidate_seed(uint64_t run_seed, std::string_view candidate_text);

// Text track. Throws std::invalid_argument if pairs has fewer than
// cfg.subset_size entries (a run-input violation, not a candidate failure).
CandidateReport evaluate_selfprog(const std::string& candidate_text,
                                  const std::vector<refine::RefinementPair>& pairs,
                                  const EvalConfig& cfg);

// Image track. Throws std::invalid_argument if train/eval indices overlap,
// either set is empty, or any index is out of range.
CandidateReport evaluate_classifier(const std::string& candidate_text,
                                    const data::ImageDataset& ds,
                                    const std::vector<int>& train_idx,
                                    const std::vector<int>& eval_idx, const EvalConfig& cfg);

// Evaluates one generation of candidates with a per-text cache: duplicate
// texts are computed once and share a report. One service instance assumes a
// fixed config and datasets across calls (the cache is keyed by text alone).
class EvalService {
 public:
  explicit EvalService(int workers = 1);

  // reports[i] always corresponds to texts[i].
  std::vector<CandidateReport> selfprog_batch(const std::vector<std::string>& texts,
                                              const std::vector<refine::RefinementPair>& pairs,
                                              const EvalConfig& cfg);
  std::vector<CandidateReport> classifier_batch(const std::vector<std::string>& texts,
                                                const data::ImageDataset& ds,
                                                const std::vector<int>& train_idx,
                                                const std::vector<int>& eval_idx,
                                                const EvalConfig& cfg);

  // Cache misses so far: how many evaluations actually ran.
  long long computed_evaluations() const { return computed_; }

 private:
  template <typename EvalOnce>
  std::vector<CandidateReport> run_batch(const std::vector<std::string>& texts, EvalOnce&& once);

  int workers_;
  long long computed_ = 0;
  std::unordered_map<std::string, CandidateReport> cache_;
};

}  // namespace respec::eval
