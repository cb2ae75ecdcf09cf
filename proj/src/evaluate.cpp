#include "respec/evaluate.hpp"

#include <atomic>
#include <chrono>
#include <exception>
#include <stdexcept>
#include <thread>
#include <unordered_set>

#include "respec/dsl.hpp"
#include "respec/errors.hpp"
#include "respec/rng.hpp"
#include "respec/seq2seq.hpp"
#include "respec/train.hpp"

namespace respec::eval {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

StageResult stage_ok() { return {StageResult::State::ok, ""}; }
StageResult stage_error(std::string detail) {
  return {StageResult::State::error, std::move(detail)};
}

// Run-input contract for the image track; violations are the caller's bug,
// not a candidate failure, so they throw instead of producing a report.
void validate_subsets(const data::ImageDataset& ds, const std::vector<int>& train_idx,
                      const std::vector<int>& eval_idx) {
  if (train_idx.empty()) throw std::invalid_argument("training subset is empty");
  if (eval_idx.empty()) throw std::invalid_argument("evaluation subset is empty");
  std::unordered_set<int> train_set(train_idx.begin(), train_idx.end());
  for (int i : eval_idx)
    if (train_set.count(i))
      throw std::invalid_argument("sample " + std::to_string(i) +
                                  " appears in both the training and evaluation subsets");
  for (int i : train_idx)
    if (i < 0 || i >= ds.n)
      throw std::invalid_argument("training index " + std::to_string(i) + " is out of range");
  for (int i : eval_idx)
    if (i < 0 || i >= ds.n)
      throw std::invalid_argument("evaluation index " + std::to_string(i) + " is out of range");
}

}  // namespace

uint64_t candidate_seed(uint64_t run_seed, std::string_view candidate_text) {
  return mix64(run_seed ^ fnv1a64(candidate_text));
}

CandidateReport evaluate_selfprog(const std::string& candidate_text,
                                  const std::vector<refine::RefinementPair>& pairs,
                                  const EvalConfig& cfg) {
  if (static_cast<int>(pairs.size()) < cfg.subset_size)
    throw std::invalid_argument("refinement dataset has " + std::to_string(pairs.size()) +
                                " pairs, need at least " + std::to_string(cfg.subset_size));

  CandidateReport r;
  r.candidate_text = candidate_text;
  auto t0 = Clock::now();

  auto parsed = dsl::parse(candidate_text);
  if (!parsed.ok()) {
    r.parse_status = stage_error(parsed.error->message);
    r.wall_time_s = seconds_since(t0);
    return r;
  }
  r.parse_status = stage_ok();

  if (parsed.spec->family() != dsl::Family::transformer) {
    r.build_status = stage_error("candidate is not a text-model spec");
    r.wall_time_s = seconds_since(t0);
    return r;
  }
  const dsl::TransformerSpec& spec = parsed.spec->transformer();
  if (cfg.enforce_ranges && !dsl::within_ranges(spec)) {
    r.build_status = stage_error("spec is outside the generator's search ranges");
    r.wall_time_s = seconds_since(t0);
    return r;
  }

  const uint64_t seed = candidate_seed(cfg.seed, candidate_text);
  nn::Seq2SeqConfig mcfg;
  mcfg.d_model = cfg.d_model;
  mcfg.max_len = cfg.max_len;
  std::optional<nn::Seq2Seq<float>> model;
  try {
    model.emplace(nn::build_seq2seq<float>(spec, mcfg, seed, cfg.max_params));
  } catch (const BuildError& e) {
    r.build_status = stage_error(e.what());
    r.wall_time_s = seconds_since(t0);
    return r;
  }
  r.build_status = stage_ok();
  r.param_count = model->param_count();

  // The scoring proxy: exactly one epoch over the leading slice, in order.
  std::vector<refine::RefinementPair> slice(pairs.begin(), pairs.begin() + cfg.subset_size);
  nn::TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = cfg.batch_size;
  tc.shuffle = false;
  tc.seed = seed;
  tc.time_cap_s = cfg.time_cap_s;
  try {
    nn::TrainReport rep = nn::train_seq2seq(*model, slice, tc);
    r.train_status = stage_ok();
    r.step_losses = rep.step_losses;
    r.fewshot_loss = rep.avg_step_loss();
  } catch (const DivergenceError& e) {
    r.train_status = stage_error(e.what());
  } catch (const TimeoutError& e) {
    r.train_status = stage_error(e.what());
  }
  r.wall_time_s = seconds_since(t0);
  return r;
}

CandidateReport evaluate_classifier(const std::string& candidate_text,
                                    const data::ImageDataset& ds,
                                    const std::vector<int>& train_idx,
                                    const std::vector<int>& eval_idx, const EvalConfig& cfg) {
  validate_subsets(ds, train_idx, eval_idx);

  CandidateReport r;
  r.candidate_text = candidate_text;
  auto t0 = Clock::now();

  auto parsed = dsl::parse(candidate_text);
  if (!parsed.ok()) {
    r.parse_status = stage_error(parsed.error->message);
    r.wall_time_s = seconds_since(t0);
    return r;
  }
  r.parse_status = stage_ok();

  if (parsed.spec->family() != dsl::Family::cnn) {
    r.build_status = stage_error("candidate is not an image-classifier spec");
    r.wall_time_s = seconds_since(t0);
    return r;
  }
  const dsl::CnnSpec& spec = parsed.spec->cnn();
  if (cfg.enforce_ranges && !dsl::within_ranges(spec)) {
    r.build_status = stage_error("spec is outside the generator's search ranges");
    r.wall_time_s = seconds_since(t0);
    return r;
  }

  const uint64_t seed = candidate_seed(cfg.seed, candidate_text);
  std::optional<nn::CnnModel<float>> model;
  try {
    model.emplace(nn::build_cnn<float>(spec, cfg.task, seed, cfg.max_params));
  } catch (const BuildError& e) {
    r.build_status = stage_error(e.what());
    r.wall_time_s = seconds_since(t0);
    return r;
  }
  r.build_status = stage_ok();
  r.param_count = model->param_count();

  nn::TrainConfig tc;
  tc.epochs = cfg.classifier_epochs;
  tc.batch_size = cfg.batch_size;
  tc.seed = seed;
  tc.time_cap_s = cfg.time_cap_s;
  try {
    nn::TrainReport rep = nn::train_classifier(*model, ds, train_idx, tc);
    r.train_status = stage_ok();
    r.step_losses = rep.step_losses;
    r.accuracy = nn::classifier_accuracy(*model, ds, eval_idx);
  } catch (const DivergenceError& e) {
    r.train_status = stage_error(e.what());
  } catch (const TimeoutError& e) {
    r.train_status = stage_error(e.what());
  }
  r.wall_time_s = seconds_since(t0);
  return r;
}

EvalService::EvalService(int workers) : workers_(workers < 1 ? 1 : workers) {}

template <typename EvalOnce>
std::vector<CandidateReport> EvalService::run_batch(const std::vector<std::string>& texts,
                                                    EvalOnce&& once) {
  // Collect texts that still need computing, first occurrence only.
  std::vector<const std::string*> jobs;
  std::unordered_set<std::string_view> queued;
  for (const auto& t : texts)
    if (!cache_.count(t) && queued.insert(t).second) jobs.push_back(&t);

  std::vector<CandidateReport> fresh(jobs.size());
  if (workers_ == 1 || jobs.size() <= 1) {
    for (size_t i = 0; i < jobs.size(); ++i) fresh[i] = once(*jobs[i]);
  } else {
    // Reports are pure functions of their text, so any scheduling produces
    // the same result set; slots are written by job index.
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(workers_));
    for (int w = 0; w < workers_; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (size_t i = next.fetch_add(1); i < jobs.size(); i = next.fetch_add(1))
            fresh[i] = once(*jobs[i]);
        } catch (...) {
          errors[static_cast<size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  computed_ += static_cast<long long>(jobs.size());
  for (size_t i = 0; i < jobs.size(); ++i) cache_[*jobs[i]] = std::move(fresh[i]);

  std::vector<CandidateReport> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(cache_.at(t));
  return out;
}

std::vector<CandidateReport> EvalService::selfprog_batch(
    const std::vector<std::string>& texts, const std::vector<refine::RefinementPair>& pairs,
    const EvalConfig& cfg) {
  // Run-input violations surface once, before any candidate work.
  if (static_cast<int>(pairs.size()) < cfg.subset_size)
    throw std::invalid_argument("refinement dataset has " + std::to_string(pairs.size()) +
                                " pairs, need at least " + std::to_string(cfg.subset_size));
  return run_batch(texts,
                   [&](const std::string& t) { return evaluate_selfprog(t, pairs, cfg); });
}

std::vector<CandidateReport> EvalService::classifier_batch(
    const std::vector<std::string>& texts, const data::ImageDataset& ds,
    const std::vector<int>& train_idx, const std::vector<int>& eval_idx,
    const EvalConfig& cfg) {
  validate_subsets(ds, train_idx, eval_idx);
  return run_batch(texts, [&](const std::string& t) {
    return evaluate_classifier(t, ds, train_idx, eval_idx, cfg);
  });
}

}  // namespace respec::eval
