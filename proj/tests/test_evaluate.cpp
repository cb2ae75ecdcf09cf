#include <bit>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <doctest.h>

#include "respec/data_io.hpp"
#include "respec/evaluate.hpp"
#include "respec/mutation.hpp"

using namespace respec;
using eval::CandidateReport;
using eval::EvalConfig;
using eval::StageResult;

namespace {

std::string tf_text(int enc, int dec, int heads, int dff) {
  return "num_layers = " + std::to_string(enc) + "\nnum_decoder_layers = " +
         std::to_string(dec) + "\nnum_heads = " + std::to_string(heads) + "\nd_ff = " +
         std::to_string(dff) + "\n";
}

std::string mlp_text(int hidden) {
  return "Linear(in=784, out=" + std::to_string(hidden) + ", bias=True)\nReLU()\nLinear(in=" +
         std::to_string(hidden) + ", out=10, bias=True)\n";
}

EvalConfig small_text_config() {
  EvalConfig cfg;
  cfg.subset_size = 64;
  cfg.batch_size = 32;
  cfg.d_model = 8;
  cfg.max_len = 64;
  cfg.seed = 5;
  return cfg;
}

const std::vector<refine::RefinementPair>& small_pairs() {
  static const auto pairs = refine::generate_pairs(dsl::Family::transformer, 1100, 42);
  return pairs;
}

data::ImageDataset small_images() {
  data::SynthConfig sc;
  sc.pattern = data::SynthConfig::Pattern::blobs;
  sc.classes = 10;
  sc.samples = 400;
  sc.noise = 0.10;
  return data::synth_dataset(sc);
}

std::vector<int> iota_range(int begin, int end) {
  std::vector<int> v;
  for (int i = begin; i < end; ++i) v.push_back(i);
  return v;
}

bool skipped(const StageResult& s) { return s.state == StageResult::State::skipped; }

}  // namespace

TEST_CASE("a valid text candidate yields a finite loss and full ok statuses") {
  auto cfg = small_text_config();
  auto r = eval::evaluate_selfprog(tf_text(1, 1, 1, 64), small_pairs(), cfg);
  CHECK(r.parse_status.ok());
  CHECK(r.build_status.ok());
  CHECK(r.train_status.ok());
  REQUIRE(r.fewshot_loss.has_value());
  CHECK(std::isfinite(*r.fewshot_loss));
  CHECK(*r.fewshot_loss > 0.0);
  CHECK_FALSE(r.accuracy.has_value());
  REQUIRE(r.param_count.has_value());
  CHECK(*r.param_count > 0);
  // 64 pairs at batch 32 -> one epoch is exactly 2 steps.
  CHECK(r.step_losses.size() == 2);
  CHECK(r.valid());
  CHECK(r.wall_time_s > 0.0);
}

TEST_CASE("the text proxy runs exactly 32 steps on 1024 pairs at batch 32") {
  auto cfg = small_text_config();
  cfg.subset_size = 1024;
  auto r = eval::evaluate_selfprog(tf_text(1, 1, 1, 64), small_pairs(), cfg);
  REQUIRE(r.valid());
  CHECK(r.step_losses.size() == 32);
  double sum = 0;
  for (float s : r.step_losses) sum += s;
  CHECK(*r.fewshot_loss == doctest::Approx(sum / 32.0).epsilon(1e-12));
}

TEST_CASE("scoring the same text twice gives bit-identical losses") {
  auto cfg = small_text_config();
  const std::string text = tf_text(2, 1, 2, 64);
  auto a = eval::evaluate_selfprog(text, small_pairs(), cfg);
  auto b = eval::evaluate_selfprog(text, small_pairs(), cfg);
  REQUIRE(a.valid());
  REQUIRE(b.valid());
  CHECK(std::bit_cast<uint64_t>(*a.fewshot_loss) == std::bit_cast<uint64_t>(*b.fewshot_loss));

  cfg.seed = 6;
  auto c = eval::evaluate_selfprog(text, small_pairs(), cfg);
  REQUIRE(c.valid());
  CHECK(*c.fewshot_loss != *a.fewshot_loss);
}

TEST_CASE("failures stop the stage ladder and leave no metrics behind") {
  auto cfg = small_text_config();

  SUBCASE("unparseable text") {
    auto r = eval::evaluate_selfprog("garbage ^^ text", small_pairs(), cfg);
    CHECK(r.parse_status.failed());
    CHECK_FALSE(r.parse_status.detail.empty());
    CHECK(skipped(r.build_status));
    CHECK(skipped(r.train_status));
    CHECK_FALSE(r.valid());
    CHECK_FALSE(r.param_count.has_value());
    CHECK(r.step_losses.empty());
  }
  SUBCASE("image-classifier text in the text track") {
    auto r = eval::evaluate_selfprog(mlp_text(16), small_pairs(), cfg);
    CHECK(r.parse_status.ok());
    CHECK(r.build_status.failed());
    CHECK(skipped(r.train_status));
    CHECK_FALSE(r.valid());
  }
  SUBCASE("parseable but outside the generator ranges") {
    auto r = eval::evaluate_selfprog(tf_text(100, 1, 1, 64), small_pairs(), cfg);
    CHECK(r.parse_status.ok());
    CHECK(r.build_status.failed());
    CHECK(r.build_status.detail.find("ranges") != std::string::npos);
    CHECK_FALSE(r.valid());
  }
  SUBCASE("range enforcement can be disabled") {
    cfg.enforce_ranges = false;
    auto r = eval::evaluate_selfprog(tf_text(1, 1, 1, 8), small_pairs(), cfg);
    CHECK(r.build_status.ok());
    CHECK(r.valid());
  }
  SUBCASE("parameter budget") {
    cfg.max_params = 1000;
    auto r = eval::evaluate_selfprog(tf_text(1, 1, 1, 64), small_pairs(), cfg);
    CHECK(r.parse_status.ok());
    CHECK(r.build_status.failed());
    CHECK(skipped(r.train_status));
    CHECK_FALSE(r.param_count.has_value());
  }
  SUBCASE("time cap becomes a train failure with build facts intact") {
    cfg.time_cap_s = 0.005;
    auto r = eval::evaluate_selfprog(tf_text(1, 1, 1, 64), small_pairs(), cfg);
    CHECK(r.parse_status.ok());
    CHECK(r.build_status.ok());
    CHECK(r.train_status.failed());
    CHECK(r.param_count.has_value());
    CHECK_FALSE(r.fewshot_loss.has_value());
    CHECK_FALSE(r.valid());
  }
}

TEST_CASE("a dataset smaller than the scoring subset is a run error") {
  auto cfg = small_text_config();
  cfg.subset_size = 4096;
  CHECK_THROWS_AS(eval::evaluate_selfprog(tf_text(1, 1, 1, 64), small_pairs(), cfg),
                  std::invalid_argument);
}

TEST_CASE("a valid classifier candidate trains and beats chance") {
  auto ds = small_images();
  auto cfg = small_text_config();
  cfg.task = nn::TaskShape{28, 28, 1, 10};
  auto train_idx = iota_range(0, 320);
  auto eval_idx = iota_range(320, 400);
  auto r = eval::evaluate_classifier(mlp_text(16), ds, train_idx, eval_idx, cfg);
  CHECK(r.parse_status.ok());
  CHECK(r.build_status.ok());
  CHECK(r.train_status.ok());
  REQUIRE(r.accuracy.has_value());
  CHECK_FALSE(r.fewshot_loss.has_value());
  CHECK(*r.accuracy > 0.15);  // chance for 10 classes is 0.10
  CHECK(*r.accuracy <= 1.0);
  REQUIRE(r.param_count.has_value());
  CHECK(*r.param_count == 784 * 16 + 16 + 16 * 10 + 10);
}

TEST_CASE("classifier-track failures mirror the text track") {
  auto ds = small_images();
  auto cfg = small_text_config();
  cfg.task = nn::TaskShape{28, 28, 1, 10};
  auto train_idx = iota_range(0, 64);
  auto eval_idx = iota_range(64, 96);

  SUBCASE("text-model spec in the image track") {
    auto r = eval::evaluate_classifier(tf_text(1, 1, 1, 64), ds, train_idx, eval_idx, cfg);
    CHECK(r.parse_status.ok());
    CHECK(r.build_status.failed());
    CHECK_FALSE(r.valid());
  }
  SUBCASE("wrong class count fails at build") {
    std::string text =
        "Linear(in=784, out=16, bias=True)\nReLU()\nLinear(in=16, out=7, bias=True)\n";
    auto r = eval::evaluate_classifier(text, ds, train_idx, eval_idx, cfg);
    CHECK(r.parse_status.ok());
    CHECK(r.build_status.failed());
  }
}

TEST_CASE("subset contract violations throw instead of producing reports") {
  auto ds = small_images();
  auto cfg = small_text_config();
  cfg.task = nn::TaskShape{28, 28, 1, 10};

  CHECK_THROWS_AS(
      eval::evaluate_classifier(mlp_text(16), ds, iota_range(0, 64), {}, cfg),
      std::invalid_argument);
  CHECK_THROWS_AS(
      eval::evaluate_classifier(mlp_text(16), ds, {}, iota_range(0, 64), cfg),
      std::invalid_argument);
  // Overlap: index 63 is in both.
  CHECK_THROWS_AS(eval::evaluate_classifier(mlp_text(16), ds, iota_range(0, 64),
                                            iota_range(63, 96), cfg),
                  std::invalid_argument);
  // Out-of-range index.
  CHECK_THROWS_AS(eval::evaluate_classifier(mlp_text(16), ds, iota_range(0, 64),
                                            iota_range(398, 401), cfg),
                  std::invalid_argument);
}

TEST_CASE("the service computes duplicates once and replays them from cache") {
  auto cfg = small_text_config();
  eval::EvalService svc(1);
  const std::string a = tf_text(1, 1, 1, 64);
  const std::string b = tf_text(1, 1, 2, 64);
  auto reports = svc.selfprog_batch({a, b, a, a}, small_pairs(), cfg);
  REQUIRE(reports.size() == 4);
  CHECK(svc.computed_evaluations() == 2);
  CHECK(reports[0].candidate_text == a);
  CHECK(reports[1].candidate_text == b);
  REQUIRE(reports[0].valid());
  REQUIRE(reports[2].valid());
  CHECK(std::bit_cast<uint64_t>(*reports[0].fewshot_loss) ==
        std::bit_cast<uint64_t>(*reports[2].fewshot_loss));
  CHECK(reports[0].wall_time_s == reports[2].wall_time_s);  // shared by cache

  // A later call over known texts does no new work.
  auto again = svc.selfprog_batch({b, a}, small_pairs(), cfg);
  CHECK(svc.computed_evaluations() == 2);
  CHECK(std::bit_cast<uint64_t>(*again[1].fewshot_loss) ==
        std::bit_cast<uint64_t>(*reports[0].fewshot_loss));
}

TEST_CASE("a worker pool returns the same reports as serial evaluation") {
  auto cfg = small_text_config();
  std::vector<std::string> texts = {tf_text(1, 1, 1, 64),  tf_text(1, 1, 2, 64),
                                    tf_text(2, 1, 1, 64),  tf_text(1, 2, 1, 64),
                                    tf_text(1, 1, 1, 128), "broken"};
  eval::EvalService serial(1);
  eval::EvalService pooled(3);
  auto rs = serial.selfprog_batch(texts, small_pairs(), cfg);
  auto rp = pooled.selfprog_batch(texts, small_pairs(), cfg);
  REQUIRE(rs.size() == rp.size());
  for (size_t i = 0; i < rs.size(); ++i) {
    CHECK(rs[i].candidate_text == rp[i].candidate_text);
    CHECK(rs[i].valid() == rp[i].valid());
    if (rs[i].valid())
      CHECK(std::bit_cast<uint64_t>(*rs[i].fewshot_loss) ==
            std::bit_cast<uint64_t>(*rp[i].fewshot_loss));
  }
}

TEST_CASE("per-candidate seeds separate by text and by run seed") {
  CHECK(eval::candidate_seed(1, "a") != eval::candidate_seed(1, "b"));
  CHECK(eval::candidate_seed(1, "a") != eval::candidate_seed(2, "a"));
  CHECK(eval::candidate_seed(7, "xyz") == eval::candidate_seed(7, "xyz"));
}
