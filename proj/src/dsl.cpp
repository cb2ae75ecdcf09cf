#include "respec/dsl.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace respec::dsl {

namespace {

// ---------------------------------------------------------------------------
// Lexing helpers
// ---------------------------------------------------------------------------

struct Cursor {
  std::string_view s;
  size_t pos = 0;

  void skip_ws() {
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t')) ++pos;
  }
  bool done() {
    skip_ws();
    return pos >= s.size();
  }
  bool eat(char c) {
    skip_ws();
    if (pos < s.size() && s[pos] == c) {
      ++pos;
      return true;
    }
    return false;
  }
  bool eat_word(std::string_view w) {
    skip_ws();
    if (s.substr(pos, w.size()) == w) {
      size_t end = pos + w.size();
      // Must not continue as an identifier.
      if (end < s.size() && (std::isalnum(static_cast<unsigned char>(s[end])) || s[end] == '_'))
        return false;
      pos = end;
      return true;
    }
    return false;
  }
  std::string_view peek_ident() {
    skip_ws();
    size_t end = pos;
    while (end < s.size() &&
           (std::isalnum(static_cast<unsigned char>(s[end])) || s[end] == '_'))
      ++end;
    return s.substr(pos, end - pos);
  }
  // Parses a (possibly signed) integer literal. Returns false on malformed
  // or absurdly large input.
  bool parse_int(long long& out) {
    skip_ws();
    size_t start = pos;
    if (pos < s.size() && (s[pos] == '-' || s[pos] == '+')) ++pos;
    size_t digits = pos;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos == digits) {
      pos = start;
      return false;
    }
    auto r = std::from_chars(s.data() + start, s.data() + pos, out);
    return r.ec == std::errc();
  }
};

ParseResult fail(ParseErrorKind kind, int line, std::string msg) {
  ParseResult r;
  r.error = ParseError{kind, line, std::move(msg)};
  return r;
}

struct Line {
  int number = 0;  // 1-based position in the original text
  std::string_view text;
};

// Strips comments and blank lines, keeping original line numbers.
std::vector<Line> significant_lines(std::string_view text) {
  std::vector<Line> out;
  int number = 0;
  size_t start = 0;
  while (start <= text.size()) {
    size_t nl = text.find('\n', start);
    std::string_view raw = text.substr(
        start, nl == std::string_view::npos ? text.size() - start : nl - start);
    ++number;
    if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
    size_t hash = raw.find('#');
    if (hash != std::string_view::npos) raw = raw.substr(0, hash);
    size_t a = raw.find_first_not_of(" \t");
    if (a != std::string_view::npos) {
      size_t b = raw.find_last_not_of(" \t");
      out.push_back({number, raw.substr(a, b - a + 1)});
    }
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  return out;
}

constexpr long long kMaxDim = 100'000'000;  // keeps every shape product in int64

// ---------------------------------------------------------------------------
// Transformer texts
// ---------------------------------------------------------------------------

ParseResult parse_transformer(const std::vector<Line>& lines, const ParseOptions& opts) {
  TransformerSpec spec;
  spec.d_model = opts.d_model;
  std::map<std::string, long long> seen;

  for (const Line& ln : lines) {
    Cursor c{ln.text};
    std::string key(c.peek_ident());
    if (key.empty())
      return fail(ParseErrorKind::syntax, ln.number, "expected `key = value`");
    c.pos += key.size();
    if (!c.eat('='))
      return fail(ParseErrorKind::syntax, ln.number, "expected `=` after `" + key + "`");
    long long value = 0;
    if (!c.parse_int(value))
      return fail(ParseErrorKind::syntax, ln.number, "expected an integer value for `" + key + "`");
    if (!c.done())
      return fail(ParseErrorKind::syntax, ln.number, "trailing characters after value");

    static const char* known[] = {"num_layers", "num_decoder_layers", "num_heads", "d_ff"};
    if (std::find_if(std::begin(known), std::end(known),
                     [&](const char* k) { return key == k; }) == std::end(known))
      return fail(ParseErrorKind::unknown_key, ln.number, "unknown parameter `" + key + "`");
    if (seen.count(key))
      return fail(ParseErrorKind::semantic, ln.number, "duplicate parameter `" + key + "`");
    if (value <= 0)
      return fail(ParseErrorKind::semantic, ln.number, "`" + key + "` must be a positive integer");
    if (value > kMaxDim)
      return fail(ParseErrorKind::semantic, ln.number, "`" + key + "` is implausibly large");
    seen[key] = value;
  }

  for (const char* req : {"num_layers", "num_decoder_layers", "d_ff"})
    if (!seen.count(req))
      return fail(ParseErrorKind::semantic, 0, std::string("missing required parameter `") + req + "`");

  spec.num_encoder_layers = static_cast<int>(seen["num_layers"]);
  spec.num_decoder_layers = static_cast<int>(seen["num_decoder_layers"]);
  spec.num_heads = seen.count("num_heads") ? static_cast<int>(seen["num_heads"]) : 8;
  spec.d_ff = static_cast<int>(seen["d_ff"]);

  if (spec.d_model % spec.num_heads != 0)
    return fail(ParseErrorKind::semantic, 0,
                "num_heads = " + std::to_string(spec.num_heads) + " does not divide d_model = " +
                    std::to_string(spec.d_model));

  ParseResult r;
  const auto& rg = transformer_ranges();
  auto warn_range = [&](const char* name, int v, int lo, int hi) {
    if (v < lo || v > hi)
      r.warnings.push_back(std::string(name) + " = " + std::to_string(v) +
                           " is outside the search range [" + std::to_string(lo) + ", " +
                           std::to_string(hi) + "]");
  };
  warn_range("num_layers", spec.num_encoder_layers, rg.min_layers, rg.max_layers);
  warn_range("num_decoder_layers", spec.num_decoder_layers, rg.min_layers, rg.max_layers);
  warn_range("num_heads", spec.num_heads, rg.min_heads, rg.max_heads);
  warn_range("d_ff", spec.d_ff, rg.min_d_ff, rg.max_d_ff);

  r.spec = ModelSpec{spec, render(spec)};
  return r;
}

// ---------------------------------------------------------------------------
// CNN texts
// ---------------------------------------------------------------------------

enum class LayerKind { input, conv, pool, linear, relu };

struct LayerDecl {
  LayerKind kind;
  int line;
  long long a = 0, b = 0, c = 0;  // input: h,w,c; conv: in,out; linear: in,out
};

// Parses one layer declaration; returns nullopt and fills `err` on failure.
std::optional<LayerDecl> parse_layer_line(const Line& ln, ParseResult& err) {
  Cursor c{ln.text};
  std::string name(c.peek_ident());
  c.pos += name.size();

  auto syntax = [&](std::string msg) {
    err = fail(ParseErrorKind::syntax, ln.number, std::move(msg));
    return std::nullopt;
  };
  auto semantic = [&](std::string msg) {
    err = fail(ParseErrorKind::semantic, ln.number, std::move(msg));
    return std::nullopt;
  };

  auto expect_pair = [&](long long want_a, long long want_b, const char* what) -> bool {
    long long x = 0, y = 0;
    if (!c.eat('(') || !c.parse_int(x) || !c.eat(',') || !c.parse_int(y) || !c.eat(')'))
      return false;
    if (x != want_a || y != want_b) {
      err = fail(ParseErrorKind::semantic, ln.number,
                 std::string("only ") + what + " is supported");
      return false;
    }
    return true;
  };

  LayerDecl d{};
  d.line = ln.number;

  if (name == "Input") {
    d.kind = LayerKind::input;
    if (!c.eat('(') || !c.parse_int(d.a) || !c.eat(',') || !c.parse_int(d.b) || !c.eat(',') ||
        !c.parse_int(d.c) || !c.eat(')') || !c.done())
      return syntax("expected `Input(height, width, channels)`");
    if (d.a <= 0 || d.b <= 0 || d.c <= 0) return semantic("input dimensions must be positive");
    if (d.a > kMaxDim || d.b > kMaxDim || d.c > kMaxDim)
      return semantic("input dimensions are implausibly large");
    return d;
  }
  if (name == "Conv2d") {
    d.kind = LayerKind::conv;
    if (!c.eat('(') || !c.parse_int(d.a) || !c.eat(',') || !c.parse_int(d.b) || !c.eat(','))
      return syntax("expected `Conv2d(in_channels, out_channels, kernel=(3, 3), stride=(1, 1))`");
    if (!c.eat_word("kernel") || !c.eat('=')) return syntax("expected `kernel=(3, 3)`");
    if (!expect_pair(3, 3, "kernel=(3, 3)")) {
      if (!err.error) err = fail(ParseErrorKind::syntax, ln.number, "expected `kernel=(3, 3)`");
      return std::nullopt;
    }
    if (!c.eat(',') || !c.eat_word("stride") || !c.eat('=')) return syntax("expected `stride=(1, 1)`");
    if (!expect_pair(1, 1, "stride=(1, 1)")) {
      if (!err.error) err = fail(ParseErrorKind::syntax, ln.number, "expected `stride=(1, 1)`");
      return std::nullopt;
    }
    if (!c.eat(')') || !c.done()) return syntax("trailing characters after `stride=(1, 1)`");
    if (d.a <= 0 || d.b <= 0) return semantic("channel counts must be positive");
    if (d.a > kMaxDim || d.b > kMaxDim) return semantic("channel counts are implausibly large");
    return d;
  }
  if (name == "MaxPool2d") {
    d.kind = LayerKind::pool;
    struct {
      const char* key;
      long long want;
    } args[] = {{"kernel", 2}, {"stride", 2}, {"padding", 0}, {"dilation", 1}};
    if (!c.eat('(')) return syntax("expected `MaxPool2d(kernel=2, stride=2, padding=0, dilation=1)`");
    for (size_t i = 0; i < 4; ++i) {
      if (i > 0 && !c.eat(',')) return syntax("expected `,` in MaxPool2d arguments");
      long long v = 0;
      if (!c.eat_word(args[i].key) || !c.eat('=') || !c.parse_int(v))
        return syntax(std::string("expected `") + args[i].key + "=<int>` in MaxPool2d");
      if (v != args[i].want)
        return semantic("only MaxPool2d(kernel=2, stride=2, padding=0, dilation=1) is supported");
    }
    if (!c.eat(')') || !c.done()) return syntax("trailing characters after MaxPool2d arguments");
    return d;
  }
  if (name == "Linear") {
    d.kind = LayerKind::linear;
    if (!c.eat('(') || !c.eat_word("in") || !c.eat('=') || !c.parse_int(d.a) || !c.eat(',') ||
        !c.eat_word("out") || !c.eat('=') || !c.parse_int(d.b) || !c.eat(',') ||
        !c.eat_word("bias") || !c.eat('='))
      return syntax("expected `Linear(in=<int>, out=<int>, bias=True)`");
    bool bias_true = c.eat_word("True");
    bool bias_false = !bias_true && c.eat_word("False");
    if (!bias_true && !bias_false) return syntax("expected `bias=True` or `bias=False`");
    if (!c.eat(')') || !c.done()) return syntax("trailing characters after Linear arguments");
    if (bias_false) return semantic("bias-free linear layers are not supported");
    if (d.a <= 0 || d.b <= 0) return semantic("linear dimensions must be positive");
    if (d.a > kMaxDim || d.b > kMaxDim) return semantic("linear dimensions are implausibly large");
    return d;
  }
  if (name == "ReLU") {
    d.kind = LayerKind::relu;
    if (!c.eat('(') || !c.eat(')') || !c.done()) return syntax("expected `ReLU()`");
    return d;
  }
  err = fail(ParseErrorKind::unknown_key, ln.number, "unknown layer `" + name + "`");
  return std::nullopt;
}

ParseResult parse_cnn(const std::vector<Line>& lines) {
  std::vector<LayerDecl> decls;
  for (const Line& ln : lines) {
    ParseResult err;
    auto d = parse_layer_line(ln, err);
    if (!d) return err;
    decls.push_back(*d);
  }

  CnnSpec spec;
  size_t i = 0;

  if (i < decls.size() && decls[i].kind == LayerKind::input) {
    spec.input_h = static_cast<int>(decls[i].a);
    spec.input_w = static_cast<int>(decls[i].b);
    spec.input_c = static_cast<int>(decls[i].c);
    ++i;
  }

  long long cur_channels = spec.input_c;
  long long h = spec.input_h, w = spec.input_w;
  while (i < decls.size() && decls[i].kind == LayerKind::conv) {
    const LayerDecl& d = decls[i];
    if (d.a != cur_channels)
      return fail(ParseErrorKind::semantic, d.line,
                  "conv expects " + std::to_string(d.a) + " input channels but receives " +
                      std::to_string(cur_channels));
    h -= 2;
    w -= 2;
    if (h < 1 || w < 1)
      return fail(ParseErrorKind::semantic, d.line, "spatial size exhausted by the conv stack");
    cur_channels = d.b;
    spec.channels.push_back(static_cast<int>(d.b));
    ++i;
  }

  if (i < decls.size() && decls[i].kind == LayerKind::pool) {
    h /= 2;
    w /= 2;
    if (h < 1 || w < 1)
      return fail(ParseErrorKind::semantic, decls[i].line, "spatial size exhausted by pooling");
    spec.pool_after_convs = true;
    ++i;
  }

  long long flatten = h * w * cur_channels;
  std::vector<long long> linear_outs;
  bool want_linear = true;
  long long expect_in = flatten;
  int last_linear_line = 0;
  for (; i < decls.size(); ++i) {
    const LayerDecl& d = decls[i];
    if (d.kind == LayerKind::input)
      return fail(ParseErrorKind::semantic, d.line, "Input must be the first declaration");
    if (d.kind == LayerKind::conv)
      return fail(ParseErrorKind::semantic, d.line, "conv layers must precede the linear stack");
    if (d.kind == LayerKind::pool)
      return fail(ParseErrorKind::semantic, d.line,
                  spec.pool_after_convs || !linear_outs.empty()
                      ? "only a single pool directly after the conv stack is supported"
                      : "pooling must directly follow the conv stack");
    if (want_linear) {
      if (d.kind != LayerKind::linear)
        return fail(ParseErrorKind::semantic, d.line, "expected a Linear declaration");
      if (d.a != expect_in)
        return fail(ParseErrorKind::semantic, d.line,
                    "linear expects in=" + std::to_string(d.a) + " but receives " +
                        std::to_string(expect_in) + " features");
      linear_outs.push_back(d.b);
      expect_in = d.b;
      last_linear_line = d.line;
      want_linear = false;
    } else {
      if (d.kind == LayerKind::linear)
        return fail(ParseErrorKind::semantic, d.line, "hidden linears must be separated by ReLU()");
      want_linear = true;  // ReLU consumed
    }
  }

  if (linear_outs.empty())
    return fail(ParseErrorKind::semantic, 0, "classifier linear stack is missing");
  if (want_linear)
    return fail(ParseErrorKind::semantic, last_linear_line,
                "the classifier must end with a Linear declaration, not ReLU()");
  if (linear_outs.size() < 2)
    return fail(ParseErrorKind::semantic, last_linear_line,
                "at least one hidden linear is required before the classifier");

  spec.num_classes = static_cast<int>(linear_outs.back());
  linear_outs.pop_back();
  spec.hidden_sizes.assign(linear_outs.begin(), linear_outs.end());

  ParseResult r;
  const auto& rg = cnn_ranges();
  auto warn = [&](std::string msg) { r.warnings.push_back(std::move(msg)); };
  if (spec.conv_count() > rg.max_conv)
    warn("conv count " + std::to_string(spec.conv_count()) + " is outside the search range [" +
         std::to_string(rg.min_conv) + ", " + std::to_string(rg.max_conv) + "]");
  if (spec.hidden_count() > rg.max_hidden_layers)
    warn("hidden layer count " + std::to_string(spec.hidden_count()) +
         " is outside the search range [" + std::to_string(rg.min_hidden_layers) + ", " +
         std::to_string(rg.max_hidden_layers) + "]");
  for (int ch : spec.channels)
    if (ch < rg.min_channels || ch > rg.max_channels) {
      warn("conv width " + std::to_string(ch) + " is outside the search range [" +
           std::to_string(rg.min_channels) + ", " + std::to_string(rg.max_channels) + "]");
      break;
    }
  for (int hs : spec.hidden_sizes)
    if (hs < rg.min_hidden || hs > rg.max_hidden) {
      warn("hidden width " + std::to_string(hs) + " is outside the search range [" +
           std::to_string(rg.min_hidden) + ", " + std::to_string(rg.max_hidden) + "]");
      break;
    }

  r.spec = ModelSpec{spec, render(spec)};
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Public API
// ---------------------------------------------------------------------------

std::string_view family_name(Family f) {
  return f == Family::transformer ? "transformer" : "cnn";
}

std::optional<Family> family_from_name(std::string_view name) {
  if (name == "transformer") return Family::transformer;
  if (name == "cnn") return Family::cnn;
  return std::nullopt;
}

ParseResult parse(std::string_view text, const ParseOptions& opts) {
  if (opts.d_model <= 0) return fail(ParseErrorKind::semantic, 0, "d_model must be positive");
  std::vector<Line> lines = significant_lines(text);
  if (lines.empty()) return fail(ParseErrorKind::syntax, 0, "empty spec");

  // Family sniff on the first significant line: layer declarations open a
  // parenthesis before any `=`, parameter assignments do the opposite.
  std::string_view first = lines.front().text;
  size_t paren = first.find('(');
  size_t eq = first.find('=');
  bool looks_cnn = paren != std::string_view::npos && (eq == std::string_view::npos || paren < eq);
  return looks_cnn ? parse_cnn(lines) : parse_transformer(lines, opts);
}

std::string render(const TransformerSpec& spec) {
  std::ostringstream os;
  os << "num_layers = " << spec.num_encoder_layers << '\n'
     << "num_decoder_layers = " << spec.num_decoder_layers << '\n'
     << "num_heads = " << spec.num_heads << '\n'
     << "d_ff = " << spec.d_ff << '\n';
  return os.str();
}

std::string render(const CnnSpec& spec) {
  if (spec.hidden_sizes.empty())
    throw std::invalid_argument("CnnSpec needs at least one hidden linear");
  ConvShape shape = propagate_conv_shape(spec);
  if (!shape.valid) throw std::invalid_argument("CnnSpec is not renderable: " + shape.issue);

  std::ostringstream os;
  os << "Input(" << spec.input_h << ", " << spec.input_w << ", " << spec.input_c << ")\n";
  int in_ch = spec.input_c;
  for (int out_ch : spec.channels) {
    os << "Conv2d(" << in_ch << ", " << out_ch << ", kernel=(3, 3), stride=(1, 1))\n";
    in_ch = out_ch;
  }
  if (spec.pool_after_convs) os << "MaxPool2d(kernel=2, stride=2, padding=0, dilation=1)\n";
  int in_features = shape.flatten;
  for (int width : spec.hidden_sizes) {
    os << "Linear(in=" << in_features << ", out=" << width << ", bias=True)\n";
    os << "ReLU()\n";
    in_features = width;
  }
  os << "Linear(in=" << in_features << ", out=" << spec.num_classes << ", bias=True)\n";
  return os.str();
}

std::string render(const ModelSpec& spec) {
  return spec.family() == Family::transformer ? render(spec.transformer()) : render(spec.cnn());
}

ModelSpec make_spec(TransformerSpec t) {
  std::string text = render(t);
  return ModelSpec{std::move(t), std::move(text)};
}

ModelSpec make_spec(CnnSpec c) {
  std::string text = render(c);
  return ModelSpec{std::move(c), std::move(text)};
}

std::map<std::string, double> design_params(const ModelSpec& spec) {
  std::map<std::string, double> out;
  if (spec.family() == Family::transformer) {
    const TransformerSpec& t = spec.transformer();
    out["enc"] = t.num_encoder_layers;
    out["dec"] = t.num_decoder_layers;
    out["heads"] = t.num_heads;
    out["d_ff"] = t.d_ff;
  } else {
    const CnnSpec& c = spec.cnn();
    out["c"] = c.conv_count();
    out["n"] = c.hidden_count();
    double avg_h = cnn_ranges().default_channels;
    if (!c.channels.empty())
      avg_h = std::accumulate(c.channels.begin(), c.channels.end(), 0.0) / c.channels.size();
    out["avg_h"] = avg_h;
    out["avg_s"] =
        std::accumulate(c.hidden_sizes.begin(), c.hidden_sizes.end(), 0.0) / c.hidden_sizes.size();
  }
  return out;
}

ConvShape propagate_conv_shape(const CnnSpec& spec) {
  ConvShape s;
  long long h = spec.input_h, w = spec.input_w, c = spec.input_c;
  if (h <= 0 || w <= 0 || c <= 0) {
    s.issue = "input dimensions must be positive";
    return s;
  }
  for (size_t i = 0; i < spec.channels.size(); ++i) {
    h -= 2;
    w -= 2;
    if (h < 1 || w < 1) {
      s.issue = "spatial size exhausted at conv layer " + std::to_string(i + 1);
      return s;
    }
    c = spec.channels[i];
  }
  if (spec.pool_after_convs) {
    h /= 2;
    w /= 2;
    if (h < 1 || w < 1) {
      s.issue = "spatial size exhausted by pooling";
      return s;
    }
  }
  s.h = static_cast<int>(h);
  s.w = static_cast<int>(w);
  s.c = static_cast<int>(c);
  long long flat = h * w * c;
  if (flat > kMaxDim) {
    s.issue = "flattened feature count is implausibly large";
    return s;
  }
  s.flatten = static_cast<int>(flat);
  s.valid = true;
  return s;
}

const TransformerRanges& transformer_ranges() {
  static const TransformerRanges r;
  return r;
}

const CnnRanges& cnn_ranges() {
  static const CnnRanges r;
  return r;
}

bool within_ranges(const TransformerSpec& s) {
  const auto& r = transformer_ranges();
  return s.num_encoder_layers >= r.min_layers && s.num_encoder_layers <= r.max_layers &&
         s.num_decoder_layers >= r.min_layers && s.num_decoder_layers <= r.max_layers &&
         s.num_heads >= r.min_heads && s.num_heads <= r.max_heads &&
         s.d_model % s.num_heads == 0 && s.d_ff >= r.min_d_ff && s.d_ff <= r.max_d_ff;
}

bool within_ranges(const CnnSpec& s) {
  const auto& r = cnn_ranges();
  if (s.conv_count() < r.min_conv || s.conv_count() > r.max_conv) return false;
  if (s.hidden_count() < r.min_hidden_layers || s.hidden_count() > r.max_hidden_layers)
    return false;
  for (int ch : s.channels)
    if (ch < r.min_channels || ch > r.max_channels) return false;
  for (int hs : s.hidden_sizes)
    if (hs < r.min_hidden || hs > r.max_hidden) return false;
  return true;
}

}  // namespace respec::dsl
