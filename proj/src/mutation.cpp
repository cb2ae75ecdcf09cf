#include "respec/mutation.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

#include "respec/pairs_io.hpp"

namespace respec::refine {

namespace {

constexpr int kMaxDraws = 1000;

// Exactly one design parameter may differ between a spec and its mutant.
bool one_delta(const dsl::ModelSpec& a, const dsl::ModelSpec& b) {
  auto pa = dsl::design_params(a);
  auto pb = dsl::design_params(b);
  if (pa.size() != pb.size()) return false;
  int changed = 0;
  for (const auto& [key, value] : pa) {
    auto it = pb.find(key);
    if (it == pb.end()) return false;
    if (it->second != value) ++changed;
  }
  return changed == 1;
}

dsl::TransformerSpec sample_transformer(Rng& rng, const GenOptions& opts) {
  const auto& r = dsl::transformer_ranges();
  dsl::TransformerSpec s;
  s.d_model = opts.d_model;
  s.num_encoder_layers = rng.uniform_int(r.min_layers, r.max_layers);
  s.num_decoder_layers = rng.uniform_int(r.min_layers, r.max_layers);
  // Heads are restricted to divisors of d_model so d_kv = d_model / heads
  // stays integral.
  std::vector<int> head_choices;
  for (int h = r.min_heads; h <= r.max_heads; ++h)
    if (opts.d_model % h == 0) head_choices.push_back(h);
  s.num_heads = head_choices[rng.next_below(head_choices.size())];
  s.d_ff = rng.uniform_int(r.min_d_ff, r.max_d_ff);
  return s;
}

dsl::CnnSpec sample_cnn(Rng& rng, const GenOptions& opts) {
  const auto& r = dsl::cnn_ranges();
  for (;;) {
    dsl::CnnSpec s;
    s.input_h = opts.input_h;
    s.input_w = opts.input_w;
    s.input_c = opts.input_c;
    s.num_classes = opts.num_classes;
    int c = rng.uniform_int(r.min_conv, r.max_conv);
    int n = rng.uniform_int(r.min_hidden_layers, r.max_hidden_layers);
    int h = rng.uniform_int(r.min_channels, r.max_channels);
    int sw = rng.uniform_int(r.min_hidden, r.max_hidden);
    s.channels.assign(c, h);
    s.hidden_sizes.assign(n, sw);
    s.pool_after_convs = c > 0;
    if (dsl::propagate_conv_shape(s).valid) return s;
  }
}

struct MutantDraw {
  dsl::CnnSpec cnn;
  dsl::TransformerSpec transformer;
  RefinementRule rule;
  bool legal = false;
};

// One joint draw of (target, action[, percent]) for a transformer spec.
MutantDraw draw_transformer(const dsl::TransformerSpec& spec, Rng& rng) {
  const auto& r = dsl::transformer_ranges();
  MutantDraw d;
  d.transformer = spec;
  int target = rng.uniform_int(0, 3);
  bool up = rng.bernoulli(0.5);

  auto step = [&](int& field, int lo, int hi, const char* name) {
    int next = field + (up ? 1 : -1);
    if (next < lo || next > hi) return;
    field = next;
    d.rule = {name, up ? RuleAction::increment : RuleAction::decrement, 0};
    d.legal = true;
  };

  switch (target) {
    case 0:
      step(d.transformer.num_encoder_layers, r.min_layers, r.max_layers, "num_layers");
      break;
    case 1:
      step(d.transformer.num_decoder_layers, r.min_layers, r.max_layers, "num_decoder_layers");
      break;
    case 2: {
      int next = spec.num_heads + (up ? 1 : -1);
      if (next < r.min_heads || next > r.max_heads || spec.d_model % next != 0) break;
      d.transformer.num_heads = next;
      d.rule = {"num_heads", up ? RuleAction::increment : RuleAction::decrement, 0};
      d.legal = true;
      break;
    }
    case 3: {
      int percent = (up ? 1 : -1) * rng.uniform_int(1, 50);
      long long next = scaled_value(spec.d_ff, percent);
      if (next < r.min_d_ff || next > r.max_d_ff || next == spec.d_ff) break;
      d.transformer.d_ff = static_cast<int>(next);
      d.rule = {"d_ff", RuleAction::scale, percent};
      d.legal = true;
      break;
    }
  }
  return d;
}

// One joint draw for a cnn spec.
MutantDraw draw_cnn(const dsl::CnnSpec& spec, Rng& rng) {
  const auto& r = dsl::cnn_ranges();
  MutantDraw d;
  d.cnn = spec;
  int target = rng.uniform_int(0, 3);
  bool up = rng.bernoulli(0.5);
  int delta = up ? 1 : -1;
  RuleAction action = up ? RuleAction::increment : RuleAction::decrement;

  switch (target) {
    case 0: {  // conv stack depth
      int next = spec.conv_count() + delta;
      if (next < r.min_conv || next > r.max_conv) break;
      if (up) {
        int width = spec.channels.empty() ? r.default_channels : spec.channels.back();
        if (width < r.min_channels || width > r.max_channels) break;
        d.cnn.channels.push_back(width);
      } else {
        d.cnn.channels.pop_back();
      }
      d.cnn.pool_after_convs = !d.cnn.channels.empty();
      d.rule = {"num_conv_layers", action, 0};
      d.legal = true;
      break;
    }
    case 1: {  // hidden stack depth
      int next = spec.hidden_count() + delta;
      if (next < r.min_hidden_layers || next > r.max_hidden_layers) break;
      if (up)
        d.cnn.hidden_sizes.push_back(spec.hidden_sizes.back());
      else
        d.cnn.hidden_sizes.pop_back();
      d.rule = {"num_hidden_layers", action, 0};
      d.legal = true;
      break;
    }
    case 2: {  // conv widths, shifted together
      if (spec.channels.empty()) break;
      bool ok = true;
      for (int& ch : d.cnn.channels) {
        ch += delta;
        if (ch < r.min_channels || ch > r.max_channels) ok = false;
      }
      if (!ok) break;
      d.rule = {"channels", action, 0};
      d.legal = true;
      break;
    }
    case 3: {  // hidden widths, shifted together
      bool ok = true;
      for (int& hs : d.cnn.hidden_sizes) {
        hs += delta;
        if (hs < r.min_hidden || hs > r.max_hidden) ok = false;
      }
      if (!ok) break;
      d.rule = {"hidden_size", action, 0};
      d.legal = true;
      break;
    }
  }
  if (d.legal && !dsl::propagate_conv_shape(d.cnn).valid) d.legal = false;
  return d;
}

}  // namespace

std::string_view action_name(RuleAction a) {
  switch (a) {
    case RuleAction::increment: return "increment";
    case RuleAction::decrement: return "decrement";
    case RuleAction::scale: return "scale";
  }
  return "?";
}

long long scaled_value(long long value, int percent) {
  // Exact integer floor of value * (100 + percent) / 100; no floating point,
  // so e.g. 1024 scaled by +30% lands on 1331 on every platform.
  return value * (100 + percent) / 100;
}

dsl::ModelSpec sample_spec(dsl::Family family, Rng& rng, const GenOptions& opts) {
  if (family == dsl::Family::transformer) return dsl::make_spec(sample_transformer(rng, opts));
  return dsl::make_spec(sample_cnn(rng, opts));
}

std::pair<dsl::ModelSpec, RefinementRule> mutate(const dsl::ModelSpec& spec, Rng& rng) {
  for (int attempt = 0; attempt < kMaxDraws; ++attempt) {
    MutantDraw d = spec.family() == dsl::Family::transformer
                       ? draw_transformer(spec.transformer(), rng)
                       : draw_cnn(spec.cnn(), rng);
    if (!d.legal) continue;
    dsl::ModelSpec mutant = spec.family() == dsl::Family::transformer
                                ? dsl::make_spec(d.transformer)
                                : dsl::make_spec(d.cnn);
    if (!one_delta(spec, mutant)) continue;
    return {std::move(mutant), std::move(d.rule)};
  }
  throw std::runtime_error("no legal one-parameter edit found for spec");
}

RefinementPair generate_pair(dsl::Family family, Rng& rng, const GenOptions& opts) {
  dsl::ModelSpec spec = sample_spec(family, rng, opts);
  auto [mutant, rule] = mutate(spec, rng);
  return RefinementPair{spec.source_text, mutant.source_text, std::move(rule)};
}

std::vector<RefinementPair> generate_pairs(dsl::Family family, long long count, uint64_t seed,
                                           const GenOptions& opts) {
  Rng base(mix64(seed));
  std::vector<RefinementPair> pairs;
  pairs.reserve(static_cast<size_t>(count));
  for (long long i = 0; i < count; ++i) {
    Rng child = base.split(static_cast<uint64_t>(i));
    pairs.push_back(generate_pair(family, child, opts));
  }
  return pairs;
}

void generate_dataset(dsl::Family family, long long count, uint64_t seed, std::ostream& sink,
                      const GenOptions& opts) {
  Rng base(mix64(seed));
  for (long long i = 0; i < count; ++i) {
    Rng child = base.split(static_cast<uint64_t>(i));
    RefinementPair pair = generate_pair(family, child, opts);
    write_pair_line(sink, pair);
  }
}

}  // namespace respec::refine
