#include <atomic>
#include <chrono>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include <doctest.h>
#include "respec/http.hpp"
#include <json.hpp>

#include "respec/checkpoint.hpp"
#include "respec/dsl.hpp"
#include "respec/errors.hpp"
#include "respec/refiner.hpp"

using namespace respec;
using nlohmann::json;

namespace {

const std::string kSource =
    "num_layers = 2\nnum_decoder_layers = 2\nnum_heads = 8\nd_ff = 1024\n";

nn::Seq2Seq<float> tiny_model(uint64_t seed) {
  dsl::TransformerSpec spec;
  spec.num_encoder_layers = 1;
  spec.num_decoder_layers = 1;
  spec.num_heads = 2;
  spec.d_ff = 16;
  nn::Seq2SeqConfig cfg;
  cfg.d_model = 8;
  cfg.max_len = 24;
  return nn::build_seq2seq<float>(spec, cfg, seed);
}

std::filesystem::path tmp_path(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / "respec_refiner_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

// In-process HTTP stub with a configurable handler.
struct StubServer {
  httplib::Server svr;
  std::thread th;
  int port = 0;

  explicit StubServer(httplib::Server::Handler handler) {
    svr.Post("/refine", std::move(handler));
    port = svr.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    th = std::thread([this] { svr.listen_after_bind(); });
    svr.wait_until_ready();
  }
  ~StubServer() {
    svr.stop();
    th.join();
  }

  refine::ExternalConfig client_config(double timeout_s = 5.0) const {
    refine::ExternalConfig cfg;
    cfg.host = "127.0.0.1";
    cfg.port = port;
    cfg.timeout_s = timeout_s;
    return cfg;
  }
};

httplib::Server::Handler oracle_echo_handler() {
  return [](const httplib::Request& req, httplib::Response& res) {
    json body = json::parse(req.body, nullptr, /*allow_exceptions=*/false);
    json resp;
    int n = body.is_object() ? body.value("n", 1) : 1;
    uint64_t seed = body.is_object() ? body.value("seed", uint64_t{0}) : 0;
    std::string source = body.is_object() ? body.value("source", "") : "";
    refine::OracleRefiner oracle;
    try {
      resp["candidates"] = oracle.refine(source, n, seed);
    } catch (const InvalidSource&) {
      resp["candidates"] = std::vector<std::string>(static_cast<size_t>(n));
    }
    res.set_content(resp.dump() + "\n", "application/json");
  };
}

}  // namespace

TEST_CASE("the one-edit proposer returns n valid texts, reproducibly") {
  refine::OracleRefiner oracle;
  auto cands = oracle.refine(kSource, 8, 7);
  REQUIRE(cands.size() == 8);
  for (const auto& c : cands) {
    CHECK(dsl::parse(c).ok());
    CHECK(c != kSource);
  }
  CHECK(oracle.refine(kSource, 8, 7) == cands);
  CHECK(oracle.refine(kSource, 8, 8) != cands);
  // Requesting fewer keeps the shared prefix: candidate i depends only on
  // (seed, i).
  auto three = oracle.refine(kSource, 3, 7);
  CHECK(std::vector<std::string>(cands.begin(), cands.begin() + 3) == three);
  CHECK(oracle.descriptor() == "oracle");
}

TEST_CASE("the one-edit proposer rejects unparseable sources") {
  refine::OracleRefiner oracle;
  CHECK_THROWS_AS(oracle.refine("what even is this", 4, 0), InvalidSource);
}

TEST_CASE("one-edit proposals parse at a 100% rate in bulk") {
  refine::OracleRefiner oracle;
  int total = 0, valid = 0;
  std::string source = kSource;
  for (uint64_t seed = 0; seed < 1250; ++seed) {
    auto cands = oracle.refine(source, 8, seed);
    for (const auto& c : cands) {
      ++total;
      if (dsl::parse(c).ok()) ++valid;
    }
    // Walk the chain so the bulk check is not anchored to one source.
    source = cands[0];
  }
  CHECK(total == 10000);
  CHECK(valid == total);
}

TEST_CASE("the sampling proposer returns exactly n texts for any source") {
  refine::LearnedRefiner refiner(tiny_model(3));
  auto a = refiner.refine(kSource, 5, 11);
  REQUIRE(a.size() == 5);
  CHECK(refiner.refine(kSource, 5, 11) == a);
  CHECK(refiner.refine(kSource, 5, 12) != a);
  // An arbitrary byte string is a fine source for a sampler.
  auto b = refiner.refine("not a spec at all", 3, 1);
  CHECK(b.size() == 3);
  CHECK(refiner.descriptor() == "learned(d_model=8)");
}

TEST_CASE("a saved refiner reloads into an identical sampler") {
  auto model = tiny_model(21);
  auto path = tmp_path("refiner_roundtrip.ckpt");
  refine::save_refiner(path.string(), model);

  auto loaded = refine::load_refiner(path.string());
  CHECK(loaded.config().d_model == model.config().d_model);
  CHECK(loaded.config().max_len == model.config().max_len);
  CHECK(loaded.spec() == model.spec());

  refine::LearnedRefiner original(std::move(model));
  refine::LearnedRefiner reloaded(std::move(loaded));
  CHECK(original.refine(kSource, 4, 9) == reloaded.refine(kSource, 4, 9));
}

TEST_CASE("sampler construction fails loudly on missing or foreign checkpoints") {
  CHECK_THROWS_AS(refine::LearnedRefiner::from_file(tmp_path("absent.ckpt").string()),
                  MissingCheckpoint);

  // A structurally valid checkpoint of the wrong kind.
  ckpt::Checkpoint c;
  c.meta["kind"] = "something_else";
  auto wrong = tmp_path("wrong_kind.ckpt");
  ckpt::save_checkpoint(wrong.string(), c);
  CHECK_THROWS_AS(refine::LearnedRefiner::from_file(wrong.string()), MissingCheckpoint);

  // Corrupt bytes.
  auto corrupt = tmp_path("corrupt.ckpt");
  std::ofstream(corrupt, std::ios::binary) << "RSPCKPT1 but not really";
  CHECK_THROWS_AS(refine::LearnedRefiner::from_file(corrupt.string()), MissingCheckpoint);
}

TEST_CASE("the remote proposer matches the local one through the mock server") {
  StubServer server(oracle_echo_handler());
  refine::ExternalRefiner remote(server.client_config());
  refine::OracleRefiner local;
  auto from_remote = remote.refine(kSource, 6, 99);
  auto from_local = local.refine(kSource, 6, 99);
  CHECK(from_remote == from_local);
  CHECK(remote.descriptor().find("external(http://127.0.0.1:") != std::string::npos);
}

TEST_CASE("short, long, and malformed replies keep the n-strings contract") {
  SUBCASE("short reply is padded with empty strings") {
    StubServer server([](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"candidates": ["a", "b", "c"]})", "application/json");
    });
    refine::ExternalRefiner remote(server.client_config());
    auto cands = remote.refine(kSource, 8, 0);
    REQUIRE(cands.size() == 8);
    CHECK(cands[0] == "a");
    CHECK(cands[2] == "c");
    for (size_t i = 3; i < 8; ++i) CHECK(cands[i].empty());
  }
  SUBCASE("long reply is truncated") {
    StubServer server([](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"candidates": ["a", "b", "c", "d", "e"]})", "application/json");
    });
    refine::ExternalRefiner remote(server.client_config());
    auto cands = remote.refine(kSource, 2, 0);
    CHECK(cands == std::vector<std::string>{"a", "b"});
  }
  SUBCASE("non-JSON body degrades to n empties") {
    StubServer server([](const httplib::Request&, httplib::Response& res) {
      res.set_content("po-tay-toes", "text/plain");
    });
    refine::ExternalRefiner remote(server.client_config());
    auto cands = remote.refine(kSource, 4, 0);
    CHECK(cands == std::vector<std::string>(4));
  }
  SUBCASE("candidates of the wrong type degrade to n empties") {
    StubServer server([](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"candidates": ["ok", 42]})", "application/json");
    });
    refine::ExternalRefiner remote(server.client_config());
    CHECK(remote.refine(kSource, 3, 0) == std::vector<std::string>(3));
  }
  SUBCASE("a 500 answer degrades to n empties") {
    StubServer server([](const httplib::Request&, httplib::Response& res) {
      res.status = 500;
      res.set_content("boom", "text/plain");
    });
    refine::ExternalRefiner remote(server.client_config());
    CHECK(remote.refine(kSource, 3, 0) == std::vector<std::string>(3));
  }
}

TEST_CASE("unreachable endpoints and slow servers degrade instead of aborting") {
  SUBCASE("nothing listening") {
    refine::ExternalConfig cfg;
    cfg.host = "127.0.0.1";
    cfg.port = 9;  // discard port; nothing listens there in this sandbox
    cfg.timeout_s = 0.25;
    refine::ExternalRefiner remote(cfg);
    CHECK(remote.refine(kSource, 5, 0) == std::vector<std::string>(5));
  }
  SUBCASE("reply slower than the deadline") {
    StubServer server([](const httplib::Request&, httplib::Response& res) {
      std::this_thread::sleep_for(std::chrono::milliseconds(400));
      res.set_content(R"({"candidates": ["late"]})", "application/json");
    });
    refine::ExternalRefiner remote(server.client_config(/*timeout_s=*/0.05));
    CHECK(remote.refine(kSource, 2, 0) == std::vector<std::string>(2));
  }
}
