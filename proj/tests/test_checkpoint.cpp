#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <doctest.h>

#include "respec/checkpoint.hpp"
#include "respec/cnn.hpp"
#include "respec/dsl.hpp"
#include "respec/errors.hpp"
#include "respec/seq2seq.hpp"

using namespace respec;

namespace {

std::filesystem::path tmp_path(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / "respec_ckpt_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

void spit(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  REQUIRE(os.good());
}

void put_u32_le(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

// A syntactically complete file: magic, meta {}, one 2x2 tensor "w".
std::string tiny_file_bytes() {
  std::string b = "RSPCKPT1";
  put_u32_le(b, 2);
  b += "{}";
  put_u32_le(b, 1);   // tensor count
  put_u32_le(b, 1);   // name length
  b += "w";
  put_u32_le(b, 2);   // rank
  put_u32_le(b, 2);   // dims
  put_u32_le(b, 2);
  for (int i = 0; i < 4; ++i) put_u32_le(b, std::bit_cast<uint32_t>(float(i) * 0.5f));
  return b;
}

ckpt::Checkpoint sample_checkpoint() {
  ckpt::Checkpoint c;
  c.meta["kind"] = "unit_test";
  c.meta["d_model"] = 8;
  ckpt::TensorEntry t;
  t.name = "layer.weight";
  t.shape = {3, 2};
  t.values = {1.0f, -2.5f, 0.0f, -0.0f,
              std::numeric_limits<float>::infinity(),
              std::numeric_limits<float>::quiet_NaN()};
  c.tensors.push_back(t);
  ckpt::TensorEntry u;
  u.name = "layer.bias";
  u.shape = {4};
  u.values = {1e-38f, 3.14f, -1e30f, std::numeric_limits<float>::denorm_min()};
  c.tensors.push_back(u);
  return c;
}

}  // namespace

TEST_CASE("checkpoint roundtrip preserves meta, shapes, and exact float bits") {
  auto path = tmp_path("roundtrip.ckpt");
  auto c = sample_checkpoint();
  ckpt::save_checkpoint(path.string(), c);
  auto r = ckpt::load_checkpoint(path.string());

  CHECK(r.meta["kind"] == "unit_test");
  CHECK(r.meta["d_model"] == 8);
  REQUIRE(r.tensors.size() == 2);
  for (size_t i = 0; i < 2; ++i) {
    CHECK(r.tensors[i].name == c.tensors[i].name);
    CHECK(r.tensors[i].shape == c.tensors[i].shape);
    REQUIRE(r.tensors[i].values.size() == c.tensors[i].values.size());
    for (size_t k = 0; k < c.tensors[i].values.size(); ++k) {
      // Bit-level comparison: NaN payloads and signed zeros must survive.
      CHECK(std::bit_cast<uint32_t>(r.tensors[i].values[k]) ==
            std::bit_cast<uint32_t>(c.tensors[i].values[k]));
    }
  }
  CHECK(r.find("layer.bias") != nullptr);
  CHECK(r.find("missing") == nullptr);
}

TEST_CASE("saving the same checkpoint twice produces identical bytes") {
  auto p1 = tmp_path("stable1.ckpt");
  auto p2 = tmp_path("stable2.ckpt");
  auto c = sample_checkpoint();
  ckpt::save_checkpoint(p1.string(), c);
  ckpt::save_checkpoint(p2.string(), c);
  CHECK(slurp(p1) == slurp(p2));

  // Load -> save is also byte-stable.
  auto r = ckpt::load_checkpoint(p1.string());
  auto p3 = tmp_path("stable3.ckpt");
  ckpt::save_checkpoint(p3.string(), r);
  CHECK(slurp(p1) == slurp(p3));
}

TEST_CASE("restored parameters make a differently-seeded model agree exactly") {
  dsl::TransformerSpec spec;
  spec.num_encoder_layers = 1;
  spec.num_decoder_layers = 1;
  spec.num_heads = 2;
  spec.d_ff = 16;
  nn::Seq2SeqConfig cfg;
  cfg.d_model = 8;
  cfg.max_len = 12;
  auto a = nn::build_seq2seq<float>(spec, cfg, 1);
  auto b = nn::build_seq2seq<float>(spec, cfg, 999);

  ckpt::Checkpoint c;
  ckpt::add_params(c, a.params());
  auto path = tmp_path("refiner.ckpt");
  ckpt::save_checkpoint(path.string(), c);
  auto r = ckpt::load_checkpoint(path.string());
  ckpt::restore_params(r, b.params());

  auto pa = a.params();
  auto pb = b.params();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(pa[i].value->data == pb[i].value->data);
  }

  nn::SamplingConfig greedy;
  greedy.temperature = 0;
  auto ga = nn::generate(a, "num_layers = 2\n", 1, 7, greedy);
  auto gb = nn::generate(b, "num_layers = 2\n", 1, 7, greedy);
  CHECK(ga == gb);
}

TEST_CASE("checkpoints carry image-classifier parameters too") {
  auto parsed = dsl::parse(
      "Input(14, 14, 1)\n"
      "Conv2d(1, 4, kernel=(3, 3), stride=(1, 1))\n"
      "Linear(in=576, out=8, bias=True)\n"
      "ReLU()\n"
      "Linear(in=8, out=10, bias=True)\n");
  REQUIRE(parsed.ok());
  nn::TaskShape task{14, 14, 1, 10};
  auto a = nn::build_cnn<float>(parsed.spec->cnn(), task, 1234);
  auto b = nn::build_cnn<float>(parsed.spec->cnn(), task, 4321);

  ckpt::Checkpoint c;
  ckpt::add_params(c, a.params());
  auto path = tmp_path("cnn.ckpt");
  ckpt::save_checkpoint(path.string(), c);
  ckpt::restore_params(ckpt::load_checkpoint(path.string()), b.params());

  auto pa = a.params();
  auto pb = b.params();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].value->data == pb[i].value->data);
}

TEST_CASE("loading a missing or damaged checkpoint fails with the right kind") {
  SUBCASE("missing file") {
    try {
      ckpt::load_checkpoint(tmp_path("nope.ckpt").string());
      FAIL("expected LoadError");
    } catch (const LoadError& e) {
      CHECK(e.kind == LoadError::Kind::io);
    }
  }
  SUBCASE("wrong magic") {
    auto p = tmp_path("magic.ckpt");
    auto b = tiny_file_bytes();
    b[3] = 'X';
    spit(p, b);
    try {
      ckpt::load_checkpoint(p.string());
      FAIL("expected LoadError");
    } catch (const LoadError& e) {
      CHECK(e.kind == LoadError::Kind::bad_magic);
    }
  }
  SUBCASE("every strict prefix is reported as truncated") {
    auto full = tiny_file_bytes();
    auto p = tmp_path("prefix.ckpt");
    for (size_t len = 0; len < full.size(); ++len) {
      spit(p, full.substr(0, len));
      try {
        ckpt::load_checkpoint(p.string());
        FAIL("expected LoadError at prefix length ", len);
      } catch (const LoadError& e) {
        // Shorter than the magic reads as a cut-off header, not a bad magic.
        CHECK(e.kind == LoadError::Kind::truncated);
      }
    }
  }
  SUBCASE("trailing bytes") {
    auto p = tmp_path("trailing.ckpt");
    spit(p, tiny_file_bytes() + "x");
    try {
      ckpt::load_checkpoint(p.string());
      FAIL("expected LoadError");
    } catch (const LoadError& e) {
      CHECK(e.kind == LoadError::Kind::malformed);
    }
  }
  SUBCASE("meta is not valid JSON") {
    std::string b = "RSPCKPT1";
    put_u32_le(b, 7);
    b += "notjson";
    put_u32_le(b, 0);
    auto p = tmp_path("badmeta.ckpt");
    spit(p, b);
    try {
      ckpt::load_checkpoint(p.string());
      FAIL("expected LoadError");
    } catch (const LoadError& e) {
      CHECK(e.kind == LoadError::Kind::malformed);
    }
  }
  SUBCASE("meta is JSON but not an object") {
    std::string b = "RSPCKPT1";
    put_u32_le(b, 5);
    b += "[1,2]";
    put_u32_le(b, 0);
    auto p = tmp_path("metalist.ckpt");
    spit(p, b);
    try {
      ckpt::load_checkpoint(p.string());
      FAIL("expected LoadError");
    } catch (const LoadError& e) {
      CHECK(e.kind == LoadError::Kind::malformed);
    }
  }
  SUBCASE("zero-dimension tensor") {
    std::string b = "RSPCKPT1";
    put_u32_le(b, 2);
    b += "{}";
    put_u32_le(b, 1);
    put_u32_le(b, 1);
    b += "w";
    put_u32_le(b, 1);  // rank 1
    put_u32_le(b, 0);  // dim 0
    auto p = tmp_path("zerodim.ckpt");
    spit(p, b);
    try {
      ckpt::load_checkpoint(p.string());
      FAIL("expected LoadError");
    } catch (const LoadError& e) {
      CHECK(e.kind == LoadError::Kind::malformed);
    }
  }
  SUBCASE("huge claimed shape cannot trigger a huge allocation") {
    std::string b = "RSPCKPT1";
    put_u32_le(b, 2);
    b += "{}";
    put_u32_le(b, 1);
    put_u32_le(b, 1);
    b += "w";
    put_u32_le(b, 4);  // rank 4, each dim near the per-dim cap
    for (int i = 0; i < 4; ++i) put_u32_le(b, (1u << 30) - 1);
    auto p = tmp_path("huge.ckpt");
    spit(p, b);
    try {
      ckpt::load_checkpoint(p.string());
      FAIL("expected LoadError");
    } catch (const LoadError& e) {
      CHECK(e.kind == LoadError::Kind::truncated);
    }
  }
}

TEST_CASE("restore rejects missing names, duplicates, and shape mismatches") {
  dsl::TransformerSpec spec;
  spec.num_encoder_layers = 1;
  spec.num_decoder_layers = 1;
  spec.num_heads = 1;
  spec.d_ff = 4;
  nn::Seq2SeqConfig cfg;
  cfg.d_model = 4;
  cfg.max_len = 8;
  auto model = nn::build_seq2seq<float>(spec, cfg, 5);

  ckpt::Checkpoint good;
  ckpt::add_params(good, model.params());

  SUBCASE("missing tensor") {
    ckpt::Checkpoint c = good;
    c.tensors.pop_back();
    CHECK_THROWS_AS(ckpt::restore_params(c, model.params()), LoadError);
  }
  SUBCASE("duplicate tensor") {
    ckpt::Checkpoint c = good;
    c.tensors.push_back(c.tensors.front());
    CHECK_THROWS_AS(ckpt::restore_params(c, model.params()), LoadError);
  }
  SUBCASE("shape mismatch") {
    ckpt::Checkpoint c = good;
    c.tensors.front().shape = {1, static_cast<int64_t>(c.tensors.front().values.size())};
    CHECK_THROWS_AS(ckpt::restore_params(c, model.params()), LoadError);
  }
}

TEST_CASE("saving to an unwritable path or with inconsistent tensors fails") {
  auto c = sample_checkpoint();
  CHECK_THROWS_AS(ckpt::save_checkpoint("/nonexistent-dir/x.ckpt", c), SaveError);

  c.tensors.front().values.pop_back();
  CHECK_THROWS_AS(ckpt::save_checkpoint(tmp_path("bad.ckpt").string(), c), SaveError);
}
