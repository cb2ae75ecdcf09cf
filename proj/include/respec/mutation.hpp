#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "respec/dsl.hpp"
#include "respec/rng.hpp"

namespace respec::refine {

struct GenOptions {
  int d_model = 512;  // engine width for transformer specs
  // Task shape for cnn specs.
  int input_h = 28, input_w = 28, input_c = 1;
  int num_classes = 10;
};

enum class RuleAction { increment, decrement, scale };

std::string_view action_name(RuleAction a);

// One applied edit. `target` names the edited parameter:
//   transformer: num_layers | num_decoder_layers | num_heads | d_ff
//   cnn:         num_conv_layers | num_hidden_layers | channels | hidden_size
// increment/decrement move the target by one step; scale multiplies d_ff by
// (100 + percent)/100 with flooring, percent in +-[1, 50].
struct RefinementRule {
  std::string target;
  RuleAction action = RuleAction::increment;
  int percent = 0;  // scale only
};

struct RefinementPair {
  std::string input_text;
  std::string output_text;
  RefinementRule rule;
};

// Uniform draw over the search space. Conv/hidden stacks are seeded with one
// width shared by all their layers so that stack-size edits stay one-delta.
// cnn specs are redrawn until the conv stack fits the task's spatial size.
dsl::ModelSpec sample_spec(dsl::Family family, Rng& rng, const GenOptions& opts = {});

// Applies one legal edit, redrawing until the result (a) keeps the edited
// parameter inside its search range, (b) still propagates shapes, and
// (c) differs from the input in exactly one design parameter. Throws
// std::runtime_error if no legal edit exists for this spec.
std::pair<dsl::ModelSpec, RefinementRule> mutate(const dsl::ModelSpec& spec, Rng& rng);

// d_ff scaling rule, exposed for tests: floor(value * (100 + percent) / 100)
// in exact integer arithmetic.
long long scaled_value(long long value, int percent);

RefinementPair generate_pair(dsl::Family family, Rng& rng, const GenOptions& opts = {});

// In-memory variant of generate_dataset; pair i comes from child stream i of
// `seed`, identical to the streamed file's line i.
std::vector<RefinementPair> generate_pairs(dsl::Family family, long long count, uint64_t seed,
                                           const GenOptions& opts = {});

// Streams `count` JSONL pairs to `sink`. Pair i is derived from child stream
// i of `seed`, so any contiguous shard of the file can be regenerated
// independently.
void generate_dataset(dsl::Family family, long long count, uint64_t seed, std::ostream& sink,
                      const GenOptions& opts = {});

}  // namespace respec::refine
