#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace respec::dsl {

// ---------------------------------------------------------------------------
// Model families
// ---------------------------------------------------------------------------

enum class Family { transformer, cnn };

std::string_view family_name(Family f);
std::optional<Family> family_from_name(std::string_view name);

// Encoder-decoder transformer described by a line-oriented `key = value` text.
// d_model is an engine-level setting, not part of the rendered text: the
// written language only exposes the four searched parameters.
struct TransformerSpec {
  int num_encoder_layers = 2;  // key: num_layers
  int num_decoder_layers = 2;  // key: num_decoder_layers
  int num_heads = 8;           // key: num_heads (optional in text, default 8)
  int d_ff = 1024;             // key: d_ff
  int d_model = 512;

  int d_kv() const { return d_model / num_heads; }
  bool operator==(const TransformerSpec&) const = default;
};

// Image classifier described by ordered layer declarations. The searched shape
// is: conv stack (3x3, stride 1, no padding) -> optional 2x2 max-pool ->
// flatten -> hidden linear+ReLU stack -> classifier linear.
struct CnnSpec {
  int input_h = 28, input_w = 28, input_c = 1;
  std::vector<int> channels;      // output channels per conv layer (may be empty)
  bool pool_after_convs = false;  // single MaxPool2d(2,2) after the conv stack
  std::vector<int> hidden_sizes;  // hidden linear widths; at least one
  int num_classes = 10;

  int conv_count() const { return static_cast<int>(channels.size()); }
  int hidden_count() const { return static_cast<int>(hidden_sizes.size()); }
  bool operator==(const CnnSpec&) const = default;
};

struct ModelSpec {
  std::variant<TransformerSpec, CnnSpec> spec;
  // Canonical rendered form; maintained by parse()/make_spec().
  std::string source_text;

  Family family() const {
    return std::holds_alternative<TransformerSpec>(spec) ? Family::transformer : Family::cnn;
  }
  const TransformerSpec& transformer() const { return std::get<TransformerSpec>(spec); }
  const CnnSpec& cnn() const { return std::get<CnnSpec>(spec); }
};

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

enum class ParseErrorKind {
  syntax,     // text does not match the grammar
  semantic,   // grammatically fine but meaningless (bad value, bad ordering, shape mismatch)
  unknown_key // unrecognized parameter or layer name
};

struct ParseError {
  ParseErrorKind kind = ParseErrorKind::syntax;
  int line = 0;  // 1-based; 0 when not tied to a specific line
  std::string message;
};

struct ParseOptions {
  // Engine width used to validate head divisibility for transformer texts.
  int d_model = 512;
};

struct ParseResult {
  std::optional<ModelSpec> spec;
  std::optional<ParseError> error;
  // Non-fatal notes, e.g. values outside the generator's search ranges.
  std::vector<std::string> warnings;

  bool ok() const { return spec.has_value(); }
};

// Total over arbitrary bytes: never throws, never aborts.
ParseResult parse(std::string_view text, const ParseOptions& opts = {});

// Canonical text for a spec. Throws std::invalid_argument if the spec is
// structurally broken (e.g. spatial size exhausted before flatten).
std::string render(const ModelSpec& spec);
std::string render(const TransformerSpec& spec);
std::string render(const CnnSpec& spec);

// Builds a ModelSpec with its canonical source_text attached.
ModelSpec make_spec(TransformerSpec t);
ModelSpec make_spec(CnnSpec c);

// ---------------------------------------------------------------------------
// Derived views
// ---------------------------------------------------------------------------

// Flat numeric summary of the searched design parameters.
//   transformer: enc, dec, heads, d_ff
//   cnn:         c, n, avg_h, avg_s   (avg_h = 16 when there are no convs,
//                matching the width a first conv is created with)
std::map<std::string, double> design_params(const ModelSpec& spec);

// Shape propagation through the conv/pool stack of a CnnSpec.
struct ConvShape {
  int h = 0, w = 0, c = 0;
  int flatten = 0;   // h*w*c after the stack
  bool valid = false;
  std::string issue;  // set when !valid
};
ConvShape propagate_conv_shape(const CnnSpec& spec);

// Search ranges shared by the generator, the mutator and the validator.
struct TransformerRanges {
  int min_layers = 1, max_layers = 8;
  int min_heads = 1, max_heads = 16;
  int min_d_ff = 64, max_d_ff = 4096;
};
struct CnnRanges {
  int min_conv = 0, max_conv = 8;
  int min_hidden_layers = 1, max_hidden_layers = 8;
  int min_channels = 16, max_channels = 512;
  int min_hidden = 16, max_hidden = 1024;
  // Channel width a conv stack is seeded with; also the latent avg_h of a
  // conv-free spec.
  int default_channels = 16;
};
const TransformerRanges& transformer_ranges();
const CnnRanges& cnn_ranges();

bool within_ranges(const TransformerSpec& s);
bool within_ranges(const CnnSpec& s);

}  // namespace respec::dsl
