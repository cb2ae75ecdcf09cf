#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "respec/dsl.hpp"
#include "respec/errors.hpp"
#include "respec/mutation.hpp"
#include "respec/nn.hpp"
#include "respec/rng.hpp"
#include "respec/train.hpp"
#include "respec/vocab.hpp"

// Character-level encoder-decoder transformer built from a TransformerSpec,
// with manual backprop, batch training on text pairs, and temperature
// sampling. Pre-norm residual blocks throughout; padding always sits at the
// end of a sequence and is masked out of attention by per-item lengths.
namespace respec::nn {

struct Seq2SeqConfig {
  int d_model = 128;
  int max_len = 96;  // hard cap on characters per side, incl. BOS/EOS
  int vocab = vocab::size();
};

struct SamplingConfig {
  double temperature = 1.0;
  int top_k = 16;  // 0 disables the filter
};

// Learned absolute positions, one row per sequence slot.
template <typename T>
class PositionTable {
 public:
  PositionTable(int max_len, int dim, Rng rng)
      : dim_(dim), val_({max_len, dim}), grad_({max_len, dim}) {
    fill_normal(val_, rng, 0.02);
  }

  // x: [B, L, dim] gets row p of the table added at every (b, p).
  void add(Tensor<T>& x, int B, int L) {
    for (int b = 0; b < B; ++b)
      for (int p = 0; p < L; ++p) {
        T* row = x.ptr() + (static_cast<int64_t>(b) * L + p) * dim_;
        const T* v = val_.ptr() + static_cast<int64_t>(p) * dim_;
        for (int j = 0; j < dim_; ++j) row[j] += v[j];
      }
  }

  void backward(const Tensor<T>& dy, int B, int L) {
    for (int b = 0; b < B; ++b)
      for (int p = 0; p < L; ++p) {
        const T* row = dy.ptr() + (static_cast<int64_t>(b) * L + p) * dim_;
        T* g = grad_.ptr() + static_cast<int64_t>(p) * dim_;
        for (int j = 0; j < dim_; ++j) g[j] += row[j];
      }
  }

  std::vector<ParamView<T>> params(const std::string& prefix) {
    return {{prefix + ".pos", &val_, &grad_}};
  }

 private:
  int dim_;
  Tensor<T> val_, grad_;
};

template <typename T>
class FeedForward {
 public:
  FeedForward(int d_model, int d_ff, Rng rng)
      : f1_(d_model, d_ff, true, rng.split("f1"), InitKind::small_normal),
        f2_(d_ff, d_model, true, rng.split("f2"), InitKind::small_normal) {}

  Tensor<T> forward(const Tensor<T>& x) { return f2_.forward(relu_.forward(f1_.forward(x))); }
  Tensor<T> backward(const Tensor<T>& dy) {
    return f1_.backward(relu_.backward(f2_.backward(dy)));
  }
  std::vector<ParamView<T>> params(const std::string& prefix) {
    auto p = f1_.params(prefix + ".f1");
    auto q = f2_.params(prefix + ".f2");
    p.insert(p.end(), q.begin(), q.end());
    return p;
  }

 private:
  Linear<T> f1_, f2_;
  ReLU<T> relu_;
};

template <typename T>
class EncoderBlock {
 public:
  EncoderBlock(int d_model, int heads, int d_ff, Rng rng)
      : ln1_(d_model), ln2_(d_model), attn_(d_model, heads, rng.split("attn")),
        ffn_(d_model, d_ff, rng.split("ffn")) {}

  Tensor<T> forward(const Tensor<T>& x, const std::vector<int>& lens) {
    Tensor<T> h1 = ln1_.forward(x);
    Tensor<T> a = attn_.forward(h1, h1, /*causal=*/false, lens);
    Tensor<T> x1 = x;
    for (int64_t i = 0; i < x1.numel(); ++i)
      x1.data[static_cast<size_t>(i)] += a.data[static_cast<size_t>(i)];
    Tensor<T> h2 = ln2_.forward(x1);
    Tensor<T> f = ffn_.forward(h2);
    for (int64_t i = 0; i < x1.numel(); ++i)
      x1.data[static_cast<size_t>(i)] += f.data[static_cast<size_t>(i)];
    return x1;
  }

  Tensor<T> backward(const Tensor<T>& dout) {
    Tensor<T> dx1 = dout;
    Tensor<T> dh2 = ffn_.backward(dout);
    Tensor<T> d2 = ln2_.backward(dh2);
    for (int64_t i = 0; i < dx1.numel(); ++i)
      dx1.data[static_cast<size_t>(i)] += d2.data[static_cast<size_t>(i)];
    auto [dq, dkv] = attn_.backward(dx1);
    for (int64_t i = 0; i < dq.numel(); ++i)
      dq.data[static_cast<size_t>(i)] += dkv.data[static_cast<size_t>(i)];
    Tensor<T> d1 = ln1_.backward(dq);
    Tensor<T> dx = dx1;
    for (int64_t i = 0; i < dx.numel(); ++i)
      dx.data[static_cast<size_t>(i)] += d1.data[static_cast<size_t>(i)];
    return dx;
  }

  std::vector<ParamView<T>> params(const std::string& prefix) {
    std::vector<ParamView<T>> p;
    for (auto& v : ln1_.params(prefix + ".ln1")) p.push_back(v);
    for (auto& v : attn_.params(prefix + ".attn")) p.push_back(v);
    for (auto& v : ln2_.params(prefix + ".ln2")) p.push_back(v);
    for (auto& v : ffn_.params(prefix + ".ffn")) p.push_back(v);
    return p;
  }

 private:
  LayerNorm<T> ln1_, ln2_;
  MultiHeadAttention<T> attn_;
  FeedForward<T> ffn_;
};

template <typename T>
class DecoderBlock {
 public:
  DecoderBlock(int d_model, int heads, int d_ff, Rng rng)
      : ln1_(d_model), ln2_(d_model), ln3_(d_model),
        self_(d_model, heads, rng.split("self")),
        cross_(d_model, heads, rng.split("cross")),
        ffn_(d_model, d_ff, rng.split("ffn")) {}

  Tensor<T> forward(const Tensor<T>& y, const Tensor<T>& enc_out,
                    const std::vector<int>& src_lens) {
    Tensor<T> h1 = ln1_.forward(y);
    Tensor<T> a = self_.forward(h1, h1, /*causal=*/true, {});
    Tensor<T> y1 = y;
    for (int64_t i = 0; i < y1.numel(); ++i)
      y1.data[static_cast<size_t>(i)] += a.data[static_cast<size_t>(i)];
    Tensor<T> h2 = ln2_.forward(y1);
    Tensor<T> c = cross_.forward(h2, enc_out, /*causal=*/false, src_lens);
    for (int64_t i = 0; i < y1.numel(); ++i)
      y1.data[static_cast<size_t>(i)] += c.data[static_cast<size_t>(i)];
    Tensor<T> h3 = ln3_.forward(y1);
    Tensor<T> f = ffn_.forward(h3);
    for (int64_t i = 0; i < y1.numel(); ++i)
      y1.data[static_cast<size_t>(i)] += f.data[static_cast<size_t>(i)];
    return y1;
  }

  // Returns {dy, d(enc_out)}.
  std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& dout) {
    Tensor<T> dy2 = dout;
    Tensor<T> dh3 = ffn_.backward(dout);
    Tensor<T> d3 = ln3_.backward(dh3);
    for (int64_t i = 0; i < dy2.numel(); ++i)
      dy2.data[static_cast<size_t>(i)] += d3.data[static_cast<size_t>(i)];
    auto [dqc, denc] = cross_.backward(dy2);
    Tensor<T> d2 = ln2_.backward(dqc);
    Tensor<T> dy1 = dy2;
    for (int64_t i = 0; i < dy1.numel(); ++i)
      dy1.data[static_cast<size_t>(i)] += d2.data[static_cast<size_t>(i)];
    auto [dqs, dkvs] = self_.backward(dy1);
    for (int64_t i = 0; i < dqs.numel(); ++i)
      dqs.data[static_cast<size_t>(i)] += dkvs.data[static_cast<size_t>(i)];
    Tensor<T> d1 = ln1_.backward(dqs);
    Tensor<T> dy = dy1;
    for (int64_t i = 0; i < dy.numel(); ++i)
      dy.data[static_cast<size_t>(i)] += d1.data[static_cast<size_t>(i)];
    return {std::move(dy), std::move(denc)};
  }

  std::vector<ParamView<T>> params(const std::string& prefix) {
    std::vector<ParamView<T>> p;
    for (auto& v : ln1_.params(prefix + ".ln1")) p.push_back(v);
    for (auto& v : self_.params(prefix + ".self")) p.push_back(v);
    for (auto& v : ln2_.params(prefix + ".ln2")) p.push_back(v);
    for (auto& v : cross_.params(prefix + ".cross")) p.push_back(v);
    for (auto& v : ln3_.params(prefix + ".ln3")) p.push_back(v);
    for (auto& v : ffn_.params(prefix + ".ffn")) p.push_back(v);
    return p;
  }

 private:
  LayerNorm<T> ln1_, ln2_, ln3_;
  MultiHeadAttention<T> self_, cross_;
  FeedForward<T> ffn_;
};

template <typename T>
class Seq2Seq {
 public:
  Seq2Seq(const dsl::TransformerSpec& spec, const Seq2SeqConfig& cfg, uint64_t init_seed)
      : spec_(spec), cfg_(cfg) {
    if (cfg.d_model <= 0 || spec.num_heads <= 0 || cfg.d_model % spec.num_heads != 0)
      throw BuildError("head count must divide d_model");
    if (spec.num_encoder_layers < 1 || spec.num_decoder_layers < 1 || spec.d_ff < 1)
      throw BuildError("layer counts and d_ff must be positive");
    Rng root(mix64(init_seed));
    src_embed_.emplace(cfg.vocab, cfg.d_model, root.split("src_embed"));
    tgt_embed_.emplace(cfg.vocab, cfg.d_model, root.split("tgt_embed"));
    pos_src_.emplace(cfg.max_len, cfg.d_model, root.split("pos_src"));
    pos_tgt_.emplace(cfg.max_len, cfg.d_model, root.split("pos_tgt"));
    for (int i = 0; i < spec.num_encoder_layers; ++i)
      enc_blocks_.emplace_back(cfg.d_model, spec.num_heads, spec.d_ff,
                               root.split("enc" + std::to_string(i)));
    for (int i = 0; i < spec.num_decoder_layers; ++i)
      dec_blocks_.emplace_back(cfg.d_model, spec.num_heads, spec.d_ff,
                               root.split("dec" + std::to_string(i)));
    enc_ln_.emplace(cfg.d_model);
    dec_ln_.emplace(cfg.d_model);
    out_proj_.emplace(cfg.d_model, cfg.vocab, /*bias=*/false, root.split("out"),
                      InitKind::small_normal);
  }

  // src_ids: B*Ls ids, padded at the end of each row; src_lens: live lengths.
  Tensor<T> encode(const std::vector<int>& src_ids, int B, int Ls,
                   const std::vector<int>& src_lens) {
    B_ = B;
    Ls_ = Ls;
    src_lens_ = src_lens;
    Tensor<T> x = src_embed_->forward(src_ids).reshaped({B, Ls, cfg_.d_model});
    pos_src_->add(x, B, Ls);
    for (auto& b : enc_blocks_) x = b.forward(x, src_lens);
    return enc_ln_->forward(x);
  }

  // dec_ids: B*Lt ids (BOS-led, padded at end). Returns logits [B, Lt, vocab].
  Tensor<T> decode(const Tensor<T>& enc_out, const std::vector<int>& src_lens,
                   const std::vector<int>& dec_ids, int B, int Lt) {
    Lt_ = Lt;
    Tensor<T> y = tgt_embed_->forward(dec_ids).reshaped({B, Lt, cfg_.d_model});
    pos_tgt_->add(y, B, Lt);
    for (auto& b : dec_blocks_) y = b.forward(y, enc_out, src_lens);
    y = dec_ln_->forward(y);
    return out_proj_->forward(y);
  }

  Tensor<T> forward(const std::vector<int>& src_ids, int B, int Ls,
                    const std::vector<int>& src_lens, const std::vector<int>& dec_ids, int Lt) {
    Tensor<T> enc_out = encode(src_ids, B, Ls, src_lens);
    return decode(enc_out, src_lens, dec_ids, B, Lt);
  }

  void backward(const Tensor<T>& dlogits) {
    Tensor<T> dy = out_proj_->backward(dlogits);
    dy = dec_ln_->backward(dy);
    Tensor<T> denc({B_, Ls_, cfg_.d_model});
    for (auto it = dec_blocks_.rbegin(); it != dec_blocks_.rend(); ++it) {
      auto [dy_next, de] = it->backward(dy);
      dy = std::move(dy_next);
      for (int64_t i = 0; i < denc.numel(); ++i)
        denc.data[static_cast<size_t>(i)] += de.data[static_cast<size_t>(i)];
    }
    pos_tgt_->backward(dy, B_, Lt_);
    tgt_embed_->backward(dy.reshaped({B_ * Lt_, cfg_.d_model}));

    Tensor<T> dx = enc_ln_->backward(denc);
    for (auto it = enc_blocks_.rbegin(); it != enc_blocks_.rend(); ++it) dx = it->backward(dx);
    pos_src_->backward(dx, B_, Ls_);
    src_embed_->backward(dx.reshaped({B_ * Ls_, cfg_.d_model}));
  }

  std::vector<ParamView<T>> params() {
    std::vector<ParamView<T>> p;
    for (auto& v : src_embed_->params("src_embed")) p.push_back(v);
    for (auto& v : tgt_embed_->params("tgt_embed")) p.push_back(v);
    for (auto& v : pos_src_->params("pos_src")) p.push_back(v);
    for (auto& v : pos_tgt_->params("pos_tgt")) p.push_back(v);
    for (size_t i = 0; i < enc_blocks_.size(); ++i)
      for (auto& v : enc_blocks_[i].params("enc" + std::to_string(i))) p.push_back(v);
    for (auto& v : enc_ln_->params("enc_ln")) p.push_back(v);
    for (size_t i = 0; i < dec_blocks_.size(); ++i)
      for (auto& v : dec_blocks_[i].params("dec" + std::to_string(i))) p.push_back(v);
    for (auto& v : dec_ln_->params("dec_ln")) p.push_back(v);
    for (auto& v : out_proj_->params("out")) p.push_back(v);
    return p;
  }

  int64_t param_count() { return nn::param_count(params()); }
  const Seq2SeqConfig& config() const { return cfg_; }
  const dsl::TransformerSpec& spec() const { return spec_; }

 private:
  dsl::TransformerSpec spec_;
  Seq2SeqConfig cfg_;
  std::optional<Embedding<T>> src_embed_, tgt_embed_;
  std::optional<PositionTable<T>> pos_src_, pos_tgt_;
  std::vector<EncoderBlock<T>> enc_blocks_;
  std::vector<DecoderBlock<T>> dec_blocks_;
  std::optional<LayerNorm<T>> enc_ln_, dec_ln_;
  std::optional<Linear<T>> out_proj_;
  int B_ = 0, Ls_ = 0, Lt_ = 0;
  std::vector<int> src_lens_;
};

template <typename T>
Seq2Seq<T> build_seq2seq(const dsl::TransformerSpec& spec, const Seq2SeqConfig& cfg,
                         uint64_t init_seed, int64_t max_params = 0) {
  Seq2Seq<T> model(spec, cfg, init_seed);
  if (max_params > 0 && model.param_count() > max_params)
    throw BuildError("parameter budget exceeded: " + std::to_string(model.param_count()) +
                     " > " + std::to_string(max_params));
  return model;
}

// ---------------------------------------------------------------------------
// Text-pair batching
// ---------------------------------------------------------------------------

struct TextBatch {
  int B = 0, Ls = 0, Lt = 0;
  std::vector<int> src_ids;   // B*Ls, PAD-filled tails
  std::vector<int> src_lens;  // per-item live length (chars + EOS)
  std::vector<int> dec_ids;   // B*Lt, BOS-led, PAD-filled tails
  std::vector<int> labels;    // B*Lt, -1 on dead positions
};

inline constexpr int kIgnoreLabel = -1;

// Truncates each side to max_len (EOS always kept on the truncated text).
inline TextBatch make_text_batch(const std::vector<refine::RefinementPair>& pairs,
                                 const std::vector<int>& order, size_t begin, size_t end,
                                 int max_len) {
  TextBatch b;
  b.B = static_cast<int>(end - begin);
  std::vector<std::vector<int>> src(static_cast<size_t>(b.B));
  std::vector<std::vector<int>> tgt(static_cast<size_t>(b.B));
  for (size_t i = begin; i < end; ++i) {
    const auto& pair = pairs[static_cast<size_t>(order[i])];
    auto& s = src[i - begin];
    s = vocab::encode(pair.input_text);
    if (static_cast<int>(s.size()) > max_len - 1) s.resize(static_cast<size_t>(max_len - 1));
    s.push_back(vocab::kEos);
    auto& t = tgt[i - begin];
    t = vocab::encode(pair.output_text);
    if (static_cast<int>(t.size()) > max_len - 1) t.resize(static_cast<size_t>(max_len - 1));
    b.Ls = std::max(b.Ls, static_cast<int>(s.size()));
    b.Lt = std::max(b.Lt, static_cast<int>(t.size()) + 1);
  }
  b.src_ids.assign(static_cast<size_t>(b.B) * b.Ls, vocab::kPad);
  b.dec_ids.assign(static_cast<size_t>(b.B) * b.Lt, vocab::kPad);
  b.labels.assign(static_cast<size_t>(b.B) * b.Lt, kIgnoreLabel);
  for (int i = 0; i < b.B; ++i) {
    const auto& s = src[static_cast<size_t>(i)];
    const auto& t = tgt[static_cast<size_t>(i)];
    b.src_lens.push_back(static_cast<int>(s.size()));
    std::copy(s.begin(), s.end(), b.src_ids.begin() + static_cast<int64_t>(i) * b.Ls);
    int64_t base = static_cast<int64_t>(i) * b.Lt;
    b.dec_ids[static_cast<size_t>(base)] = vocab::kBos;
    for (size_t j = 0; j < t.size(); ++j) {
      b.dec_ids[static_cast<size_t>(base) + 1 + j] = t[j];
      b.labels[static_cast<size_t>(base) + j] = t[j];
    }
    b.labels[static_cast<size_t>(base) + t.size()] = vocab::kEos;
  }
  return b;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

// Teacher-forced next-character training. Same config/report/error semantics
// as train_classifier: divergence and wall-clock failures throw, everything
// else is deterministic in the seed.
template <typename T>
TrainReport train_seq2seq(Seq2Seq<T>& model, const std::vector<refine::RefinementPair>& pairs,
                          const TrainConfig& cfg) {
  if (pairs.empty()) throw std::invalid_argument("empty pair list");
  TrainReport report;
  Deadline deadline(cfg.time_cap_s);
  Rng order_rng(mix64(cfg.seed ^ 0x7265666eULL));
  std::vector<int> order(pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) order[i] = static_cast<int>(i);

  Adam<T> adam(cfg.lr);
  auto params = model.params();
  const size_t bs = static_cast<size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) shuffle(order, order_rng);
    double epoch_total = 0;
    int64_t epoch_steps = 0;
    for (size_t begin = 0; begin < pairs.size(); begin += bs) {
      if (deadline.expired()) throw TimeoutError("training exceeded the wall-clock cap");
      size_t end = std::min(begin + bs, pairs.size());
      TextBatch batch = make_text_batch(pairs, order, begin, end, model.config().max_len);
      Tensor<T> logits =
          model.forward(batch.src_ids, batch.B, batch.Ls, batch.src_lens, batch.dec_ids, batch.Lt);
      Tensor<T> dlogits;
      auto [loss, live] = softmax_cross_entropy(logits, batch.labels, kIgnoreLabel, &dlogits);
      (void)live;
      if (!std::isfinite(loss)) throw DivergenceError("training loss became non-finite");
      zero_grads(params);
      model.backward(dlogits);
      if (cfg.optimizer == "sgd")
        apply_sgd(params, static_cast<T>(cfg.lr));
      else
        adam.step(params);
      report.step_losses.push_back(loss);
      epoch_total += loss;
      ++epoch_steps;
      ++report.steps;
      if (cfg.max_steps > 0 && report.steps >= cfg.max_steps) {
        report.epoch_losses.push_back(epoch_total / static_cast<double>(epoch_steps));
        return report;
      }
    }
    report.epoch_losses.push_back(epoch_total / static_cast<double>(epoch_steps));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

// One id from a logit row. temperature <= 0 is argmax; ties break toward the
// lower id so decoding is deterministic. Non-finite logits are treated as
// -inf so even a diverged model yields a (deterministic) sample.
template <typename T>
int sample_logits(const T* row, int V, const SamplingConfig& cfg, Rng& rng) {
  std::vector<double> v(static_cast<size_t>(V));
  for (int j = 0; j < V; ++j) {
    double x = static_cast<double>(row[j]);
    v[static_cast<size_t>(j)] = std::isfinite(x) ? x : -std::numeric_limits<double>::infinity();
  }
  if (cfg.temperature <= 0) {
    int best = 0;
    for (int j = 1; j < V; ++j)
      if (v[static_cast<size_t>(j)] > v[static_cast<size_t>(best)]) best = j;
    return best;
  }
  int k = cfg.top_k > 0 ? std::min(cfg.top_k, V) : V;
  std::vector<int> idx(static_cast<size_t>(V));
  for (int j = 0; j < V; ++j) idx[static_cast<size_t>(j)] = j;
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
    double va = v[static_cast<size_t>(a)], vb = v[static_cast<size_t>(b)];
    if (va != vb) return va > vb;
    return a < b;
  });
  double mx = v[static_cast<size_t>(idx[0])] / cfg.temperature;
  std::vector<double> w(static_cast<size_t>(k));
  double total = 0;
  for (int j = 0; j < k; ++j) {
    w[static_cast<size_t>(j)] =
        std::exp(v[static_cast<size_t>(idx[static_cast<size_t>(j)])] / cfg.temperature - mx);
    total += w[static_cast<size_t>(j)];
  }
  if (!std::isfinite(total) || total <= 0) return idx[0];
  double r = rng.uniform01() * total;
  double acc = 0;
  for (int j = 0; j < k; ++j) {
    acc += w[static_cast<size_t>(j)];
    if (r < acc) return idx[static_cast<size_t>(j)];
  }
  return idx[static_cast<size_t>(k - 1)];
}

// n sampled decodings of `source`. Deterministic in (seed, n): sample i uses
// the child stream split(i), so prefixes of the batch are stable.
template <typename T>
std::vector<std::string> generate(Seq2Seq<T>& model, const std::string& source, int n,
                                  uint64_t seed, const SamplingConfig& cfg) {
  const int max_len = model.config().max_len;
  const int V = model.config().vocab;
  std::vector<int> src = vocab::encode(source);
  if (static_cast<int>(src.size()) > max_len - 1) src.resize(static_cast<size_t>(max_len - 1));
  src.push_back(vocab::kEos);
  const int Ls = static_cast<int>(src.size());
  Tensor<T> enc_out = model.encode(src, 1, Ls, {Ls});

  Rng base(mix64(seed));
  std::vector<std::string> out;
  out.reserve(static_cast<size_t>(n));
  for (int s = 0; s < n; ++s) {
    Rng rng = base.split(static_cast<uint64_t>(s));
    std::vector<int> ids{vocab::kBos};
    std::vector<int> emitted;
    while (static_cast<int>(ids.size()) < max_len) {
      Tensor<T> logits = model.decode(enc_out, {Ls}, ids, 1, static_cast<int>(ids.size()));
      const T* row = logits.ptr() + (logits.numel() - V);
      int id = sample_logits(row, V, cfg, rng);
      if (id == vocab::kEos) break;
      ids.push_back(id);
      emitted.push_back(id);
    }
    out.push_back(vocab::decode(emitted));
  }
  return out;
}

}  // namespace respec::nn
