#include <doctest.h>

#include <map>
#include <set>
#include <stdexcept>
#include <string>

#include "respec/dsl.hpp"
#include "respec/rng.hpp"

using namespace respec;
using namespace respec::dsl;

namespace {

ModelSpec must_parse(const std::string& text, int d_model = 512) {
  ParseOptions opts;
  opts.d_model = d_model;
  ParseResult r = parse(text, opts);
  REQUIRE_MESSAGE(r.ok(), (r.error ? r.error->message : "no error"));
  return *r.spec;
}

ParseError must_fail(const std::string& text, int d_model = 512) {
  ParseOptions opts;
  opts.d_model = d_model;
  ParseResult r = parse(text, opts);
  REQUIRE_FALSE(r.ok());
  REQUIRE(r.error.has_value());
  return *r.error;
}

}  // namespace

// ---------------------------------------------------------------------------
// Transformer texts
// ---------------------------------------------------------------------------

TEST_CASE("initial transformer renders canonically") {
  TransformerSpec s;  // defaults: 2 enc, 2 dec, 8 heads, d_ff 1024
  CHECK(render(s) ==
        "num_layers = 2\n"
        "num_decoder_layers = 2\n"
        "num_heads = 8\n"
        "d_ff = 1024\n");
}

TEST_CASE("transformer text parses with num_heads defaulting to 8") {
  ModelSpec m = must_parse(
      "num_layers = 2\n"
      "num_decoder_layers = 2\n"
      "d_ff = 1331\n");
  REQUIRE(m.family() == Family::transformer);
  const TransformerSpec& t = m.transformer();
  CHECK(t.num_encoder_layers == 2);
  CHECK(t.num_decoder_layers == 2);
  CHECK(t.num_heads == 8);
  CHECK(t.d_ff == 1331);
  CHECK(t.d_model == 512);
  CHECK(t.d_kv() == 64);
}

TEST_CASE("transformer parsing tolerates comments, blank lines, and spacing") {
  ModelSpec m = must_parse(
      "# architecture\n"
      "\n"
      "  num_layers=3   # encoder depth\n"
      "num_decoder_layers =4\r\n"
      "num_heads = 16\n"
      "d_ff= 512\n");
  const TransformerSpec& t = m.transformer();
  CHECK(t.num_encoder_layers == 3);
  CHECK(t.num_decoder_layers == 4);
  CHECK(t.num_heads == 16);
  CHECK(t.d_ff == 512);
}

TEST_CASE("transformer parse errors are structured") {
  SUBCASE("negative value is semantic") {
    ParseError e = must_fail("num_layers = 2\nnum_decoder_layers = 2\nd_ff = -5\n");
    CHECK(e.kind == ParseErrorKind::semantic);
    CHECK(e.line == 3);
  }
  SUBCASE("zero value is semantic") {
    ParseError e = must_fail("num_layers = 0\nnum_decoder_layers = 2\nd_ff = 64\n");
    CHECK(e.kind == ParseErrorKind::semantic);
  }
  SUBCASE("unknown key") {
    ParseError e = must_fail("num_layers = 2\nnum_decoder_layers = 2\nd_ff = 64\ndropout = 1\n");
    CHECK(e.kind == ParseErrorKind::unknown_key);
    CHECK(e.line == 4);
  }
  SUBCASE("duplicate key is semantic") {
    ParseError e = must_fail("num_layers = 2\nnum_layers = 3\nnum_decoder_layers = 2\nd_ff = 64\n");
    CHECK(e.kind == ParseErrorKind::semantic);
    CHECK(e.line == 2);
  }
  SUBCASE("missing required key is semantic") {
    ParseError e = must_fail("num_layers = 2\nd_ff = 64\n");
    CHECK(e.kind == ParseErrorKind::semantic);
  }
  SUBCASE("non-integer value is syntax") {
    ParseError e = must_fail("num_layers = two\nnum_decoder_layers = 2\nd_ff = 64\n");
    CHECK(e.kind == ParseErrorKind::syntax);
    CHECK(e.line == 1);
  }
  SUBCASE("trailing junk is syntax") {
    ParseError e = must_fail("num_layers = 2 2\nnum_decoder_layers = 2\nd_ff = 64\n");
    CHECK(e.kind == ParseErrorKind::syntax);
  }
  SUBCASE("empty text is syntax") {
    ParseError e = must_fail("");
    CHECK(e.kind == ParseErrorKind::syntax);
  }
  SUBCASE("heads must divide d_model") {
    ParseError e = must_fail(
        "num_layers = 2\nnum_decoder_layers = 2\nnum_heads = 5\nd_ff = 64\n");
    CHECK(e.kind == ParseErrorKind::semantic);
  }
}

TEST_CASE("heads divisibility respects the configured d_model") {
  // 448 / 7 = 64, so 7 heads is fine at d_model 448 though not at 512.
  ModelSpec m = must_parse(
      "num_layers = 1\nnum_decoder_layers = 1\nnum_heads = 7\nd_ff = 64\n", 448);
  CHECK(m.transformer().d_kv() == 64);
  must_fail("num_layers = 1\nnum_decoder_layers = 1\nnum_heads = 7\nd_ff = 64\n", 512);
}

TEST_CASE("out-of-range values parse with a warning") {
  ParseResult r = parse("num_layers = 12\nnum_decoder_layers = 2\nd_ff = 64\n");
  REQUIRE(r.ok());
  CHECK(r.warnings.size() == 1);
  CHECK_FALSE(within_ranges(r.spec->transformer()));
}

// ---------------------------------------------------------------------------
// CNN texts
// ---------------------------------------------------------------------------

TEST_CASE("plain MLP text parses without an Input line") {
  ModelSpec m = must_parse(
      "Linear(in=784, out=64, bias=True)\n"
      "ReLU()\n"
      "Linear(in=64, out=64, bias=True)\n"
      "ReLU()\n"
      "Linear(in=64, out=10, bias=True)\n");
  REQUIRE(m.family() == Family::cnn);
  const CnnSpec& c = m.cnn();
  CHECK(c.input_h == 28);
  CHECK(c.input_w == 28);
  CHECK(c.input_c == 1);
  CHECK(c.conv_count() == 0);
  CHECK_FALSE(c.pool_after_convs);
  CHECK(c.hidden_sizes == std::vector<int>{64, 64});
  CHECK(c.num_classes == 10);
}

TEST_CASE("conv stack text parses and propagates shapes") {
  // 28x28 -> conv 26x26x128 -> conv 24x24x256 -> pool 12x12x256 = 36864.
  ModelSpec m = must_parse(
      "Conv2d(1, 128, kernel=(3, 3), stride=(1, 1))\n"
      "Conv2d(128, 256, kernel=(3, 3), stride=(1, 1))\n"
      "MaxPool2d(kernel=2, stride=2, padding=0, dilation=1)\n"
      "Linear(in=36864, out=64, bias=True)\n"
      "ReLU()\n"
      "Linear(in=64, out=62, bias=True)\n");
  const CnnSpec& c = m.cnn();
  CHECK(c.channels == std::vector<int>{128, 256});
  CHECK(c.pool_after_convs);
  CHECK(c.hidden_sizes == std::vector<int>{64});
  CHECK(c.num_classes == 62);

  ConvShape s = propagate_conv_shape(c);
  REQUIRE(s.valid);
  CHECK(s.h == 12);
  CHECK(s.w == 12);
  CHECK(s.c == 256);
  CHECK(s.flatten == 36864);
}

TEST_CASE("declared flatten width must match the propagated shape") {
  // The same stack as above but claiming in=6400: 6400 != 12*12*256.
  ParseError e = must_fail(
      "Conv2d(1, 128, kernel=(3, 3), stride=(1, 1))\n"
      "Conv2d(128, 256, kernel=(3, 3), stride=(1, 1))\n"
      "MaxPool2d(kernel=2, stride=2, padding=0, dilation=1)\n"
      "Linear(in=6400, out=64, bias=True)\n"
      "ReLU()\n"
      "Linear(in=64, out=62, bias=True)\n");
  CHECK(e.kind == ParseErrorKind::semantic);
  CHECK(e.line == 4);
}

TEST_CASE("explicit Input line overrides the default shape") {
  ModelSpec m = must_parse(
      "Input(12, 10, 3)\n"
      "Conv2d(3, 16, kernel=(3, 3), stride=(1, 1))\n"
      "MaxPool2d(kernel=2, stride=2, padding=0, dilation=1)\n"
      "Linear(in=320, out=16, bias=True)\n"  // 5*4*16
      "ReLU()\n"
      "Linear(in=16, out=4, bias=True)\n");
  const CnnSpec& c = m.cnn();
  CHECK(c.input_h == 12);
  CHECK(c.input_w == 10);
  CHECK(c.input_c == 3);
  CHECK(propagate_conv_shape(c).flatten == 320);
}

TEST_CASE("cnn grammar violations are rejected") {
  SUBCASE("conv input channels must chain") {
    ParseError e = must_fail(
        "Conv2d(1, 16, kernel=(3, 3), stride=(1, 1))\n"
        "Conv2d(32, 16, kernel=(3, 3), stride=(1, 1))\n"
        "Linear(in=9216, out=16, bias=True)\n"
        "ReLU()\n"
        "Linear(in=16, out=10, bias=True)\n");
    CHECK(e.kind == ParseErrorKind::semantic);
    CHECK(e.line == 2);
  }
  SUBCASE("only 3x3 kernels are supported") {
    ParseError e = must_fail(
        "Conv2d(1, 16, kernel=(5, 5), stride=(1, 1))\n"
        "Linear(in=9216, out=16, bias=True)\n"
        "ReLU()\n"
        "Linear(in=16, out=10, bias=True)\n");
    CHECK(e.kind == ParseErrorKind::semantic);
  }
  SUBCASE("pool parameters are pinned") {
    ParseError e = must_fail(
        "MaxPool2d(kernel=3, stride=2, padding=0, dilation=1)\n"
        "Linear(in=169, out=16, bias=True)\n"
        "ReLU()\n"
        "Linear(in=16, out=10, bias=True)\n");
    CHECK(e.kind == ParseErrorKind::semantic);
  }
  SUBCASE("bias-free linears are rejected") {
    ParseError e = must_fail(
        "Linear(in=784, out=16, bias=False)\n"
        "ReLU()\n"
        "Linear(in=16, out=10, bias=True)\n");
    CHECK(e.kind == ParseErrorKind::semantic);
  }
  SUBCASE("unknown layer name") {
    ParseError e = must_fail("Dropout(0.5)\n");
    CHECK(e.kind == ParseErrorKind::unknown_key);
  }
  SUBCASE("trailing ReLU is rejected") {
    ParseError e = must_fail(
        "Linear(in=784, out=16, bias=True)\n"
        "ReLU()\n"
        "Linear(in=16, out=10, bias=True)\n"
        "ReLU()\n");
    CHECK(e.kind == ParseErrorKind::semantic);
  }
  SUBCASE("hidden linears need a ReLU between them") {
    ParseError e = must_fail(
        "Linear(in=784, out=16, bias=True)\n"
        "Linear(in=16, out=10, bias=True)\n");
    CHECK(e.kind == ParseErrorKind::semantic);
  }
  SUBCASE("a single linear has no hidden stack") {
    ParseError e = must_fail("Linear(in=784, out=10, bias=True)\n");
    CHECK(e.kind == ParseErrorKind::semantic);
  }
  SUBCASE("conv after linear is rejected") {
    ParseError e = must_fail(
        "Linear(in=784, out=16, bias=True)\n"
        "ReLU()\n"
        "Conv2d(1, 16, kernel=(3, 3), stride=(1, 1))\n"
        "Linear(in=16, out=10, bias=True)\n");
    CHECK(e.kind == ParseErrorKind::semantic);
  }
  SUBCASE("second pool is rejected") {
    ParseError e = must_fail(
        "Conv2d(1, 16, kernel=(3, 3), stride=(1, 1))\n"
        "MaxPool2d(kernel=2, stride=2, padding=0, dilation=1)\n"
        "MaxPool2d(kernel=2, stride=2, padding=0, dilation=1)\n"
        "Linear(in=576, out=16, bias=True)\n"
        "ReLU()\n"
        "Linear(in=16, out=10, bias=True)\n");
    CHECK(e.kind == ParseErrorKind::semantic);
  }
  SUBCASE("Input must come first") {
    ParseError e = must_fail(
        "Conv2d(1, 16, kernel=(3, 3), stride=(1, 1))\n"
        "Input(28, 28, 1)\n"
        "Linear(in=10816, out=16, bias=True)\n"
        "ReLU()\n"
        "Linear(in=16, out=10, bias=True)\n");
    CHECK(e.kind == ParseErrorKind::semantic);
  }
}

TEST_CASE("spatial exhaustion is a structured error") {
  SUBCASE("convs run out of pixels") {
    ParseError e = must_fail(
        "Input(5, 5, 1)\n"
        "Conv2d(1, 16, kernel=(3, 3), stride=(1, 1))\n"
        "Conv2d(16, 16, kernel=(3, 3), stride=(1, 1))\n"
        "Conv2d(16, 16, kernel=(3, 3), stride=(1, 1))\n"
        "Linear(in=16, out=16, bias=True)\n"
        "ReLU()\n"
        "Linear(in=16, out=10, bias=True)\n");
    CHECK(e.kind == ParseErrorKind::semantic);
    CHECK(e.line == 4);
  }
  SUBCASE("pool runs out of pixels") {
    ParseError e = must_fail(
        "Input(3, 3, 1)\n"
        "Conv2d(1, 16, kernel=(3, 3), stride=(1, 1))\n"
        "MaxPool2d(kernel=2, stride=2, padding=0, dilation=1)\n"
        "Linear(in=16, out=16, bias=True)\n"
        "ReLU()\n"
        "Linear(in=16, out=10, bias=True)\n");
    CHECK(e.kind == ParseErrorKind::semantic);
  }
}

// ---------------------------------------------------------------------------
// Roundtrip and totality properties
// ---------------------------------------------------------------------------

TEST_CASE("parse(render(spec)) is the identity on random specs") {
  Rng rng(2024);
  const auto& tr = transformer_ranges();
  const auto& cr = cnn_ranges();

  for (int i = 0; i < 1000; ++i) {
    TransformerSpec t;
    t.num_encoder_layers = rng.uniform_int(tr.min_layers, tr.max_layers);
    t.num_decoder_layers = rng.uniform_int(tr.min_layers, tr.max_layers);
    const int head_choices[] = {1, 2, 4, 8, 16};
    t.num_heads = head_choices[rng.next_below(5)];
    t.d_ff = rng.uniform_int(tr.min_d_ff, tr.max_d_ff);
    t.d_model = 512;
    ModelSpec m = make_spec(t);
    ModelSpec back = must_parse(m.source_text);
    CHECK(back.transformer() == t);
    CHECK(back.source_text == m.source_text);
  }

  for (int i = 0; i < 1000; ++i) {
    CnnSpec c;
    c.num_classes = rng.uniform_int(2, 62);
    int convs = rng.uniform_int(cr.min_conv, cr.max_conv);
    for (int j = 0; j < convs; ++j)
      c.channels.push_back(rng.uniform_int(cr.min_channels, cr.max_channels));
    c.pool_after_convs = convs > 0 && rng.bernoulli(0.7);
    int hid = rng.uniform_int(cr.min_hidden_layers, cr.max_hidden_layers);
    for (int j = 0; j < hid; ++j)
      c.hidden_sizes.push_back(rng.uniform_int(cr.min_hidden, cr.max_hidden));
    ModelSpec m = make_spec(c);
    ModelSpec back = must_parse(m.source_text);
    CHECK(back.cnn() == c);
    CHECK(back.source_text == m.source_text);
  }
}

TEST_CASE("canonical render is injective over sampled specs") {
  Rng rng(7);
  std::map<std::string, TransformerSpec> seen;
  for (int i = 0; i < 3000; ++i) {
    TransformerSpec t;
    t.num_encoder_layers = rng.uniform_int(1, 8);
    t.num_decoder_layers = rng.uniform_int(1, 8);
    const int head_choices[] = {1, 2, 4, 8, 16};
    t.num_heads = head_choices[rng.next_below(5)];
    t.d_ff = rng.uniform_int(64, 4096);
    std::string text = render(t);
    auto [it, inserted] = seen.emplace(text, t);
    if (!inserted) CHECK(it->second == t);
  }
}

TEST_CASE("parse is total over garbage bytes") {
  Rng rng(55);
  for (int i = 0; i < 2000; ++i) {
    int len = rng.uniform_int(0, 120);
    std::string s;
    for (int j = 0; j < len; ++j) s.push_back(static_cast<char>(rng.next_below(256)));
    ParseResult r = parse(s);  // must not crash or throw
    if (!r.ok()) CHECK(r.error.has_value());
  }
  // Structured-looking garbage too.
  const char* tokens[] = {"num_layers", "Linear", "Conv2d", "ReLU()", "=", "(", ")",
                          ",", "kernel", "3", "in=784", "True", "\n", " ", "d_ff"};
  for (int i = 0; i < 2000; ++i) {
    std::string s;
    int len = rng.uniform_int(1, 20);
    for (int j = 0; j < len; ++j) s += tokens[rng.next_below(15)];
    parse(s);
  }
}

// ---------------------------------------------------------------------------
// Derived views
// ---------------------------------------------------------------------------

TEST_CASE("design_params summarizes the searched parameters") {
  SUBCASE("transformer") {
    ModelSpec m = make_spec(TransformerSpec{});
    auto p = design_params(m);
    CHECK(p.at("enc") == 2.0);
    CHECK(p.at("dec") == 2.0);
    CHECK(p.at("heads") == 8.0);
    CHECK(p.at("d_ff") == 1024.0);
  }
  SUBCASE("cnn with convs") {
    CnnSpec c;
    c.channels = {100, 200};
    c.pool_after_convs = true;
    c.hidden_sizes = {64, 32};
    auto p = design_params(make_spec(c));
    CHECK(p.at("c") == 2.0);
    CHECK(p.at("n") == 2.0);
    CHECK(p.at("avg_h") == 150.0);
    CHECK(p.at("avg_s") == 48.0);
  }
  SUBCASE("conv-free cnn reports the seed width as avg_h") {
    CnnSpec c;
    c.hidden_sizes = {16};
    auto p = design_params(make_spec(c));
    CHECK(p.at("c") == 0.0);
    CHECK(p.at("avg_h") == 16.0);
  }
}

TEST_CASE("render rejects structurally impossible cnn specs") {
  CnnSpec c;
  c.input_h = 5;
  c.input_w = 5;
  c.channels = {16, 16, 16};  // 5 -> 3 -> 1 -> exhausted
  c.hidden_sizes = {16};
  CHECK_THROWS_AS((void)render(c), std::invalid_argument);

  CnnSpec no_hidden;
  no_hidden.hidden_sizes = {};
  CHECK_THROWS_AS((void)render(no_hidden), std::invalid_argument);
}
