#include "respec/refiner.hpp"

#include <chrono>
#include <cmath>

#include "respec/http.hpp"
#include <json.hpp>

#include "respec/checkpoint.hpp"
#include "respec/dsl.hpp"
#include "respec/errors.hpp"
#include "respec/mutation.hpp"
#include "respec/rng.hpp"

namespace respec::refine {

using nlohmann::json;

std::vector<std::string> OracleRefiner::refine(const std::string& source, int n,
                                               uint64_t seed) {
  if (n <= 0) return {};
  auto parsed = dsl::parse(source);
  if (!parsed.ok())
    throw InvalidSource("oracle refiner needs a parseable source: " + parsed.error->message);

  std::vector<std::string> out;
  out.reserve(static_cast<size_t>(n));
  Rng base(mix64(seed));
  for (int i = 0; i < n; ++i) {
    Rng child = base.split(static_cast<uint64_t>(i));
    auto [spec, rule] = mutate(*parsed.spec, child);
    out.push_back(spec.source_text);
  }
  return out;
}

LearnedRefiner::LearnedRefiner(nn::Seq2Seq<float> model, nn::SamplingConfig sampling)
    : model_(std::move(model)), sampling_(sampling) {}

LearnedRefiner LearnedRefiner::from_file(const std::string& path,
                                         nn::SamplingConfig sampling) {
  return LearnedRefiner(load_refiner(path), sampling);
}

std::vector<std::string> LearnedRefiner::refine(const std::string& source, int n,
                                                uint64_t seed) {
  if (n <= 0) return {};
  std::lock_guard<std::mutex> lock(mu_);
  return nn::generate(model_, source, n, seed, sampling_);
}

std::string LearnedRefiner::descriptor() const {
  return "learned(d_model=" + std::to_string(model_.config().d_model) + ")";
}

ExternalRefiner::ExternalRefiner(ExternalConfig cfg) : cfg_(std::move(cfg)) {}

std::vector<std::string> ExternalRefiner::refine(const std::string& source, int n,
                                                 uint64_t seed) {
  if (n <= 0) return {};
  std::vector<std::string> out(static_cast<size_t>(n));  // degraded answer: n empties

  httplib::Client cli(cfg_.host, cfg_.port);
  auto timeout = std::chrono::milliseconds(
      static_cast<long long>(std::llround(cfg_.timeout_s * 1000.0)));
  cli.set_connection_timeout(timeout);
  cli.set_read_timeout(timeout);
  cli.set_write_timeout(timeout);

  json req = {{"source", source}, {"n", n}, {"temperature", cfg_.temperature}};
  if (cfg_.send_seed) req["seed"] = seed;
  auto res = cli.Post(cfg_.path, req.dump() + "\n", "application/json");
  if (!res || res->status != 200) return out;

  json body = json::parse(res->body, nullptr, /*allow_exceptions=*/false);
  if (body.is_discarded() || !body.is_object()) return out;
  auto it = body.find("candidates");
  if (it == body.end() || !it->is_array()) return out;
  for (const auto& c : *it)
    if (!c.is_string()) return out;  // a malformed reply degrades wholesale

  for (size_t i = 0; i < out.size() && i < it->size(); ++i)
    out[i] = (*it)[i].get<std::string>();
  return out;  // short replies stay padded, long ones are truncated
}

std::string ExternalRefiner::descriptor() const {
  return "external(http://" + cfg_.host + ":" + std::to_string(cfg_.port) + cfg_.path + ")";
}

void save_refiner(const std::string& path, nn::Seq2Seq<float>& model) {
  ckpt::Checkpoint c;
  c.meta["kind"] = "seq2seq_refiner";
  c.meta["spec"] = dsl::render(model.spec());
  c.meta["d_model"] = model.config().d_model;
  c.meta["max_len"] = model.config().max_len;
  c.meta["vocab"] = model.config().vocab;
  ckpt::add_params(c, model.params());
  ckpt::save_checkpoint(path, c);
}

nn::Seq2Seq<float> load_refiner(const std::string& path) {
  ckpt::Checkpoint c;
  try {
    c = ckpt::load_checkpoint(path);
  } catch (const LoadError& e) {
    throw MissingCheckpoint("refiner checkpoint " + path + ": " + e.what());
  }
  if (c.meta.value("kind", "") != "seq2seq_refiner")
    throw MissingCheckpoint("refiner checkpoint " + path + ": wrong or missing kind");
  auto has_int = [&](const char* key) {
    return c.meta.contains(key) && c.meta[key].is_number_integer();
  };
  if (!c.meta.contains("spec") || !c.meta["spec"].is_string() || !has_int("d_model") ||
      !has_int("max_len") || !has_int("vocab"))
    throw MissingCheckpoint("refiner checkpoint " + path + ": incomplete metadata");

  auto parsed = dsl::parse(c.meta["spec"].get<std::string>());
  if (!parsed.ok() || parsed.spec->family() != dsl::Family::transformer)
    throw MissingCheckpoint("refiner checkpoint " + path + ": stored spec does not parse");

  nn::Seq2SeqConfig cfg;
  cfg.d_model = c.meta["d_model"].get<int>();
  cfg.max_len = c.meta["max_len"].get<int>();
  cfg.vocab = c.meta["vocab"].get<int>();
  try {
    auto model = nn::build_seq2seq<float>(parsed.spec->transformer(), cfg, 0);
    ckpt::restore_params(c, model.params());
    return model;
  } catch (const BuildError& e) {
    throw MissingCheckpoint("refiner checkpoint " + path + ": " + e.what());
  } catch (const LoadError& e) {
    throw MissingCheckpoint("refiner checkpoint " + path + ": " + e.what());
  }
}

}  // namespace respec::refine
