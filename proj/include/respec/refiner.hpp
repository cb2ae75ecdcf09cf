#pragma once

// Candidate proposers. Every backend answers one question — "given this
// source text, propose n refined texts" — and always returns exactly n
// strings. Invalid proposals are not this layer's concern: downstream
// evaluation discards anything that fails to parse, build, or train.

#include <cstdint>
#include <mutex>
#include <string>
#include <vector>

#include "respec/seq2seq.hpp"

namespace respec::refine {

class Refiner {
 public:
  virtual ~Refiner() = default;

  // Returns exactly n candidate texts, deterministically for a given
  // (source, n, seed) triple wherever the backend can promise that.
  virtual std::vector<std::string> refine(const std::string& source, int n, uint64_t seed) = 0;

  // Stable identifier for logs and run manifests.
  virtual std::string descriptor() const = 0;
};

// Applies the dataset's own generative rule: each candidate is a one-edit
// variant of the source, valid by construction. Throws InvalidSource if the
// source text does not parse.
class OracleRefiner : public Refiner {
 public:
  std::vector<std::string> refine(const std::string& source, int n, uint64_t seed) override;
  std::string descriptor() const override { return "oracle"; }
};

// Samples candidates from a trained character-level seq2seq model. Proposals
// carry no validity guarantee. Calls are serialized internally; the model's
// weights are never modified.
class LearnedRefiner : public Refiner {
 public:
  LearnedRefiner(nn::Seq2Seq<float> model, nn::SamplingConfig sampling = {});

  // Rebuilds the model from a saved checkpoint. Throws MissingCheckpoint if
  // the file is absent or does not deserialize into a refiner.
  static LearnedRefiner from_file(const std::string& path, nn::SamplingConfig sampling = {});

  std::vector<std::string> refine(const std::string& source, int n, uint64_t seed) override;
  std::string descriptor() const override;

  nn::Seq2Seq<float>& model() { return model_; }

 private:
  nn::Seq2Seq<float> model_;
  nn::SamplingConfig sampling_;
  std::mutex mu_;
};

struct ExternalConfig {
  std::string host = "127.0.0.1";
  int port = 8700;
  std::string path = "/refine";
  double temperature = 1.0;
  double timeout_s = 30.0;
  bool send_seed = true;  // include the seed in requests (servers may ignore it)
};

// Delegates to a remote proposer over HTTP. One request per refine call:
//   POST <path>  body {"source": ..., "n": ..., "temperature": ..., "seed": ...}
//   response     {"candidates": ["...", ...]}
// A short reply is padded with empty strings, a long one truncated. Transport
// failures, timeouts, and malformed responses all degrade to n empty strings
// (auto-invalid downstream) — an unreachable server never aborts a run.
class ExternalRefiner : public Refiner {
 public:
  explicit ExternalRefiner(ExternalConfig cfg);
  std::vector<std::string> refine(const std::string& source, int n, uint64_t seed) override;
  std::string descriptor() const override;

 private:
  ExternalConfig cfg_;
};

// Refiner checkpoint persistence: the generic container plus enough metadata
// to rebuild the exact model (spec text + engine config).
void save_refiner(const std::string& path, nn::Seq2Seq<float>& model);
nn::Seq2Seq<float> load_refiner(const std::string& path);  // throws MissingCheckpoint

}  // namespace respec::refine
