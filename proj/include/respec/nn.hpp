#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "respec/rng.hpp"
#include "respec/tensor.hpp"

namespace respec::nn {

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <typename T>
struct ParamView {
  std::string name;
  Tensor<T>* value = nullptr;
  Tensor<T>* grad = nullptr;
};

template <typename T>
void zero_grads(const std::vector<ParamView<T>>& params) {
  for (const auto& p : params) p.grad->fill(T(0));
}

template <typename T>
int64_t param_count(const std::vector<ParamView<T>>& params) {
  int64_t n = 0;
  for (const auto& p : params) n += p.value->numel();
  return n;
}

template <typename T>
void fill_normal(Tensor<T>& t, Rng& rng, double stddev) {
  for (auto& v : t.data) v = static_cast<T>(rng.gaussian(0.0, stddev));
}
template <typename T>
void fill_normal(Tensor<T>& t, Rng&& rng, double stddev) {
  fill_normal(t, rng, stddev);
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

enum class InitKind { he, small_normal };  // small_normal: N(0, 0.02)

template <typename T>
class Linear {
 public:
  Linear(int in, int out, bool bias, Rng rng, InitKind init = InitKind::he)
      : in_(in), out_(out), has_bias_(bias), w_({out, in}), gw_({out, in}) {
    double std = init == InitKind::he ? std::sqrt(2.0 / in) : 0.02;
    fill_normal(w_, rng, std);
    if (bias) {
      b_ = Tensor<T>({out});
      gb_ = Tensor<T>({out});
    }
  }

  // x: [..., in] -> [..., out]
  Tensor<T> forward(const Tensor<T>& x) {
    x_ = x;
    std::vector<int> out_shape = x.shape;
    out_shape.back() = out_;
    Tensor<T> y(out_shape);
    int64_t rows = x.numel() / in_;
    matmul_nt(x.ptr(), rows, in_, w_.ptr(), out_, y.ptr());
    if (has_bias_) {
      auto Y = mat_view(y.ptr(), rows, static_cast<int64_t>(out_));
      auto B = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(b_.ptr(), out_);
      Y.rowwise() += B.transpose();
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    int64_t rows = dy.numel() / out_;
    // dW += dY^T X ; db += column sums ; dX = dY W
    matmul_tn(dy.ptr(), rows, out_, x_.ptr(), in_, gw_.ptr(), /*accumulate=*/true);
    if (has_bias_) {
      auto DY = mat_view(dy.ptr(), rows, static_cast<int64_t>(out_));
      auto GB = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(gb_.ptr(), out_);
      GB += DY.colwise().sum().transpose();
    }
    Tensor<T> dx(x_.shape);
    matmul_nn(dy.ptr(), rows, out_, w_.ptr(), in_, dx.ptr());
    return dx;
  }

  std::vector<ParamView<T>> params(const std::string& prefix) {
    std::vector<ParamView<T>> p{{prefix + ".w", &w_, &gw_}};
    if (has_bias_) p.push_back({prefix + ".b", &b_, &gb_});
    return p;
  }

  int in_features() const { return in_; }
  int out_features() const { return out_; }
  Tensor<T>& weight() { return w_; }
  Tensor<T>& bias() { return b_; }

 private:
  int in_, out_;
  bool has_bias_;
  Tensor<T> w_, gw_, b_, gb_;
  Tensor<T> x_;
};

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

template <typename T>
class ReLU {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    x_ = x;
    Tensor<T> y = x;
    for (auto& v : y.data) v = v > T(0) ? v : T(0);
    return y;
  }
  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx = dy;
    for (int64_t i = 0; i < dx.numel(); ++i)
      if (x_.data[static_cast<size_t>(i)] <= T(0)) dx.data[static_cast<size_t>(i)] = T(0);
    return dx;
  }

 private:
  Tensor<T> x_;
};

// ---------------------------------------------------------------------------
// Conv2d: 3x3 kernel, stride 1, no padding, with bias
// ---------------------------------------------------------------------------

template <typename T>
class Conv2d {
 public:
  static constexpr int kK = 3;

  Conv2d(int in_ch, int out_ch, Rng rng)
      : in_ch_(in_ch),
        out_ch_(out_ch),
        w_({out_ch, in_ch * kK * kK}),
        gw_({out_ch, in_ch * kK * kK}),
        b_({out_ch}),
        gb_({out_ch}) {
    fill_normal(w_, rng, std::sqrt(2.0 / (in_ch * kK * kK)));
  }

  // x: [B, C, H, W] -> [B, OC, H-2, W-2]
  Tensor<T> forward(const Tensor<T>& x) {
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int OH = H - 2, OW = W - 2, P = OH * OW, CK = C * kK * kK;
    in_shape_ = x.shape;
    cols_ = Tensor<T>({B, P, CK});
    Tensor<T> y({B, out_ch_, OH, OW});

    for (int b = 0; b < B; ++b) {
      T* col = cols_.ptr() + static_cast<int64_t>(b) * P * CK;
      const T* img = x.ptr() + static_cast<int64_t>(b) * C * H * W;
      im2col(img, C, H, W, col);
      // y_b [OC, P] = W [OC, CK] * col^T [CK, P]
      auto Wm = mat_view(w_.ptr(), out_ch_, CK);
      auto Cm = mat_view(col, P, CK);
      MatView<T> Ym(y.ptr() + static_cast<int64_t>(b) * out_ch_ * P, out_ch_, P);
      Ym.noalias() = Wm * Cm.transpose();
      auto Bv = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(b_.ptr(), out_ch_);
      Ym.colwise() += Bv;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const int B = in_shape_[0], C = in_shape_[1], H = in_shape_[2], W = in_shape_[3];
    const int OH = H - 2, OW = W - 2, P = OH * OW, CK = C * kK * kK;
    Tensor<T> dx({B, C, H, W});
    RowMat<T> dcol(P, CK);

    for (int b = 0; b < B; ++b) {
      ConstMatView<T> DY(dy.ptr() + static_cast<int64_t>(b) * out_ch_ * P, out_ch_, P);
      auto col = mat_view(cols_.ptr() + static_cast<int64_t>(b) * P * CK, P, CK);
      auto GW = mat_view(gw_.ptr(), out_ch_, CK);
      GW.noalias() += DY * col;
      auto GB = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(gb_.ptr(), out_ch_);
      GB += DY.rowwise().sum();
      auto Wm = mat_view(w_.ptr(), out_ch_, CK);
      dcol.noalias() = DY.transpose() * Wm;
      col2im(dcol.data(), C, H, W, dx.ptr() + static_cast<int64_t>(b) * C * H * W);
    }
    return dx;
  }

  std::vector<ParamView<T>> params(const std::string& prefix) {
    return {{prefix + ".w", &w_, &gw_}, {prefix + ".b", &b_, &gb_}};
  }

  int out_channels() const { return out_ch_; }

 private:
  // col row (oh, ow), col column (c, kh, kw)
  static void im2col(const T* img, int C, int H, int W, T* col) {
    const int OH = H - 2, OW = W - 2;
    for (int oh = 0; oh < OH; ++oh)
      for (int ow = 0; ow < OW; ++ow) {
        T* row = col + (static_cast<int64_t>(oh) * OW + ow) * C * kK * kK;
        for (int c = 0; c < C; ++c) {
          const T* base = img + (static_cast<int64_t>(c) * H + oh) * W + ow;
          for (int kh = 0; kh < kK; ++kh)
            for (int kw = 0; kw < kK; ++kw) *row++ = base[kh * W + kw];
        }
      }
  }

  static void col2im(const T* col, int C, int H, int W, T* img) {
    const int OH = H - 2, OW = W - 2;
    for (int oh = 0; oh < OH; ++oh)
      for (int ow = 0; ow < OW; ++ow) {
        const T* row = col + (static_cast<int64_t>(oh) * OW + ow) * C * kK * kK;
        for (int c = 0; c < C; ++c) {
          T* base = img + (static_cast<int64_t>(c) * H + oh) * W + ow;
          for (int kh = 0; kh < kK; ++kh)
            for (int kw = 0; kw < kK; ++kw) base[kh * W + kw] += *row++;
        }
      }
  }

  int in_ch_, out_ch_;
  Tensor<T> w_, gw_, b_, gb_;
  Tensor<T> cols_;
  std::vector<int> in_shape_;
};

// ---------------------------------------------------------------------------
// MaxPool2d: 2x2 window, stride 2, floor division (trailing odd row/col drops)
// ---------------------------------------------------------------------------

template <typename T>
class MaxPool2d {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int OH = H / 2, OW = W / 2;
    in_shape_ = x.shape;
    Tensor<T> y({B, C, OH, OW});
    argmax_.assign(static_cast<size_t>(y.numel()), 0);
    int64_t o = 0;
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        const T* plane = x.ptr() + (static_cast<int64_t>(b) * C + c) * H * W;
        for (int oh = 0; oh < OH; ++oh)
          for (int ow = 0; ow < OW; ++ow, ++o) {
            int base = oh * 2 * W + ow * 2;
            // Fixed scan order: ties resolve to the earliest cell.
            int best = base;
            T bv = plane[base];
            for (int dh = 0; dh < 2; ++dh)
              for (int dw = 0; dw < 2; ++dw) {
                int idx = base + dh * W + dw;
                if (plane[idx] > bv) {
                  bv = plane[idx];
                  best = idx;
                }
              }
            y.data[static_cast<size_t>(o)] = bv;
            argmax_[static_cast<size_t>(o)] = best;
          }
      }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const int B = in_shape_[0], C = in_shape_[1], H = in_shape_[2], W = in_shape_[3];
    const int OH = H / 2, OW = W / 2;
    Tensor<T> dx({B, C, H, W});
    int64_t o = 0;
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        T* plane = dx.ptr() + (static_cast<int64_t>(b) * C + c) * H * W;
        for (int i = 0; i < OH * OW; ++i, ++o)
          plane[argmax_[static_cast<size_t>(o)]] += dy.data[static_cast<size_t>(o)];
      }
    return dx;
  }

 private:
  std::vector<int> in_shape_;
  std::vector<int> argmax_;
};

// ---------------------------------------------------------------------------
// Embedding
// ---------------------------------------------------------------------------

template <typename T>
class Embedding {
 public:
  Embedding(int vocab, int dim, Rng rng)
      : vocab_(vocab), dim_(dim), table_({vocab, dim}), grad_({vocab, dim}) {
    fill_normal(table_, rng, 0.02);
  }

  // ids: [N] -> [N, dim]
  Tensor<T> forward(const std::vector<int>& ids) {
    ids_ = ids;
    Tensor<T> y({static_cast<int>(ids.size()), dim_});
    for (size_t i = 0; i < ids.size(); ++i)
      std::copy_n(table_.ptr() + static_cast<int64_t>(ids[i]) * dim_, dim_,
                  y.ptr() + static_cast<int64_t>(i) * dim_);
    return y;
  }

  void backward(const Tensor<T>& dy) {
    for (size_t i = 0; i < ids_.size(); ++i) {
      T* g = grad_.ptr() + static_cast<int64_t>(ids_[i]) * dim_;
      const T* d = dy.ptr() + static_cast<int64_t>(i) * dim_;
      for (int j = 0; j < dim_; ++j) g[j] += d[j];
    }
  }

  // Row lookup without recording anything (for incremental decoding).
  void lookup(int id, T* out) const {
    std::copy_n(table_.ptr() + static_cast<int64_t>(id) * dim_, dim_, out);
  }

  std::vector<ParamView<T>> params(const std::string& prefix) {
    return {{prefix + ".table", &table_, &grad_}};
  }

  int vocab() const { return vocab_; }
  int dim() const { return dim_; }

 private:
  int vocab_, dim_;
  Tensor<T> table_, grad_;
  std::vector<int> ids_;
};

// ---------------------------------------------------------------------------
// LayerNorm over the last axis
// ---------------------------------------------------------------------------

template <typename T>
class LayerNorm {
 public:
  explicit LayerNorm(int dim) : dim_(dim), g_({dim}), gg_({dim}), b_({dim}), gb_({dim}) {
    g_.fill(T(1));
  }

  Tensor<T> forward(const Tensor<T>& x) {
    const int64_t rows = x.numel() / dim_;
    xhat_ = Tensor<T>(x.shape);
    inv_std_.assign(static_cast<size_t>(rows), T(0));
    Tensor<T> y(x.shape);
    for (int64_t r = 0; r < rows; ++r) {
      const T* xr = x.ptr() + r * dim_;
      T* hr = xhat_.ptr() + r * dim_;
      T* yr = y.ptr() + r * dim_;
      T mean = 0;
      for (int j = 0; j < dim_; ++j) mean += xr[j];
      mean /= T(dim_);
      T var = 0;
      for (int j = 0; j < dim_; ++j) {
        T d = xr[j] - mean;
        var += d * d;
      }
      var /= T(dim_);
      T inv = T(1) / std::sqrt(var + T(1e-5));
      inv_std_[static_cast<size_t>(r)] = inv;
      for (int j = 0; j < dim_; ++j) {
        hr[j] = (xr[j] - mean) * inv;
        yr[j] = hr[j] * g_.data[static_cast<size_t>(j)] + b_.data[static_cast<size_t>(j)];
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const int64_t rows = dy.numel() / dim_;
    Tensor<T> dx(dy.shape);
    for (int64_t r = 0; r < rows; ++r) {
      const T* dyr = dy.ptr() + r * dim_;
      const T* hr = xhat_.ptr() + r * dim_;
      T* dxr = dx.ptr() + r * dim_;
      T inv = inv_std_[static_cast<size_t>(r)];
      T sum_dh = 0, sum_dhh = 0;
      for (int j = 0; j < dim_; ++j) {
        T dh = dyr[j] * g_.data[static_cast<size_t>(j)];
        sum_dh += dh;
        sum_dhh += dh * hr[j];
        gg_.data[static_cast<size_t>(j)] += dyr[j] * hr[j];
        gb_.data[static_cast<size_t>(j)] += dyr[j];
      }
      T mean_dh = sum_dh / T(dim_);
      T mean_dhh = sum_dhh / T(dim_);
      for (int j = 0; j < dim_; ++j) {
        T dh = dyr[j] * g_.data[static_cast<size_t>(j)];
        dxr[j] = inv * (dh - mean_dh - hr[j] * mean_dhh);
      }
    }
    return dx;
  }

  std::vector<ParamView<T>> params(const std::string& prefix) {
    return {{prefix + ".g", &g_, &gg_}, {prefix + ".b", &b_, &gb_}};
  }

 private:
  int dim_;
  Tensor<T> g_, gg_, b_, gb_;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

// ---------------------------------------------------------------------------
// Multi-head scaled dot-product attention
// ---------------------------------------------------------------------------

template <typename T>
using StridedView = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedView = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
class MultiHeadAttention {
 public:
  // Projections carry no bias; d_head = d_model / heads (checked upstream).
  MultiHeadAttention(int d_model, int heads, Rng rng)
      : d_(d_model),
        heads_(heads),
        dh_(d_model / heads),
        wq_({d_, d_}), gwq_({d_, d_}),
        wk_({d_, d_}), gwk_({d_, d_}),
        wv_({d_, d_}), gwv_({d_, d_}),
        wo_({d_, d_}), gwo_({d_, d_}) {
    fill_normal(wq_, rng.split("wq"), 0.02);
    fill_normal(wk_, rng.split("wk"), 0.02);
    fill_normal(wv_, rng.split("wv"), 0.02);
    fill_normal(wo_, rng.split("wo"), 0.02);
  }

  // xq: [B, Lq, D], xkv: [B, Lk, D]. kv_lens masks key positions >= len per
  // batch item (empty means every position is live). causal masks j > i.
  Tensor<T> forward(const Tensor<T>& xq, const Tensor<T>& xkv, bool causal,
                    const std::vector<int>& kv_lens) {
    xq_ = xq;
    xkv_ = xkv;
    causal_ = causal;
    const int B = xq.dim(0), Lq = xq.dim(1), Lk = xkv.dim(1);
    const int64_t rq = static_cast<int64_t>(B) * Lq, rk = static_cast<int64_t>(B) * Lk;

    q_ = Tensor<T>({B, Lq, d_});
    k_ = Tensor<T>({B, Lk, d_});
    v_ = Tensor<T>({B, Lk, d_});
    matmul_nt(xq.ptr(), rq, d_, wq_.ptr(), d_, q_.ptr());
    matmul_nt(xkv.ptr(), rk, d_, wk_.ptr(), d_, k_.ptr());
    matmul_nt(xkv.ptr(), rk, d_, wv_.ptr(), d_, v_.ptr());

    probs_ = Tensor<T>({B, heads_, Lq, Lk});
    ctx_ = Tensor<T>({B, Lq, d_});
    const T scale = T(1) / std::sqrt(T(dh_));
    const T ninf = -std::numeric_limits<T>::infinity();

    for (int b = 0; b < B; ++b) {
      const int klen = kv_lens.empty() ? Lk : kv_lens[static_cast<size_t>(b)];
      for (int h = 0; h < heads_; ++h) {
        auto Q = head_view(q_, b, Lq, h);
        auto K = head_view(k_, b, Lk, h);
        auto V = head_view(v_, b, Lk, h);
        MatView<T> S(probs_slice(b, h), Lq, Lk);
        S.noalias() = Q * K.transpose() * scale;
        for (int i = 0; i < Lq; ++i) {
          T* row = S.data() + static_cast<int64_t>(i) * Lk;
          int limit = causal_ ? std::min(klen, i + 1) : klen;
          for (int j = limit; j < Lk; ++j) row[j] = ninf;
          softmax_row(row, Lk);
        }
        StridedView<T> C(ctx_.ptr() + (static_cast<int64_t>(b) * Lq) * d_ + h * dh_, Lq, dh_,
                         Eigen::OuterStride<>(d_));
        C.noalias() = S * V;
      }
    }

    Tensor<T> y({B, Lq, d_});
    matmul_nt(ctx_.ptr(), rq, d_, wo_.ptr(), d_, y.ptr());
    return y;
  }

  // Returns {dxq, dxkv}; parameter grads accumulate.
  std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& dy) {
    const int B = xq_.dim(0), Lq = xq_.dim(1), Lk = xkv_.dim(1);
    const int64_t rq = static_cast<int64_t>(B) * Lq, rk = static_cast<int64_t>(B) * Lk;
    const T scale = T(1) / std::sqrt(T(dh_));

    // Output projection.
    matmul_tn(dy.ptr(), rq, d_, ctx_.ptr(), d_, gwo_.ptr(), true);
    Tensor<T> dctx({B, Lq, d_});
    matmul_nn(dy.ptr(), rq, d_, wo_.ptr(), d_, dctx.ptr());

    Tensor<T> dq({B, Lq, d_}), dk({B, Lk, d_}), dv({B, Lk, d_});
    RowMat<T> dprobs(Lq, Lk), dscores(Lq, Lk);

    for (int b = 0; b < B; ++b)
      for (int h = 0; h < heads_; ++h) {
        auto Q = head_view(q_, b, Lq, h);
        auto K = head_view(k_, b, Lk, h);
        auto V = head_view(v_, b, Lk, h);
        ConstMatView<T> P(probs_slice(b, h), Lq, Lk);
        ConstStridedView<T> DC(dctx.ptr() + (static_cast<int64_t>(b) * Lq) * d_ + h * dh_, Lq,
                               dh_, Eigen::OuterStride<>(d_));

        dprobs.noalias() = DC * V.transpose();
        StridedView<T> DV(dv.ptr() + (static_cast<int64_t>(b) * Lk) * d_ + h * dh_, Lk, dh_,
                          Eigen::OuterStride<>(d_));
        DV.noalias() += P.transpose() * DC;

        // Softmax Jacobian per row; masked entries have p = 0 so they stay 0.
        for (int i = 0; i < Lq; ++i) {
          T dot = 0;
          for (int j = 0; j < Lk; ++j) dot += dprobs(i, j) * P(i, j);
          for (int j = 0; j < Lk; ++j) dscores(i, j) = P(i, j) * (dprobs(i, j) - dot) * scale;
        }

        StridedView<T> DQ(dq.ptr() + (static_cast<int64_t>(b) * Lq) * d_ + h * dh_, Lq, dh_,
                          Eigen::OuterStride<>(d_));
        DQ.noalias() += dscores * K;
        StridedView<T> DK(dk.ptr() + (static_cast<int64_t>(b) * Lk) * d_ + h * dh_, Lk, dh_,
                          Eigen::OuterStride<>(d_));
        DK.noalias() += dscores.transpose() * Q;
      }

    // Input projections.
    matmul_tn(dq.ptr(), rq, d_, xq_.ptr(), d_, gwq_.ptr(), true);
    matmul_tn(dk.ptr(), rk, d_, xkv_.ptr(), d_, gwk_.ptr(), true);
    matmul_tn(dv.ptr(), rk, d_, xkv_.ptr(), d_, gwv_.ptr(), true);

    Tensor<T> dxq({B, Lq, d_});
    matmul_nn(dq.ptr(), rq, d_, wq_.ptr(), d_, dxq.ptr());
    Tensor<T> dxkv({B, Lk, d_});
    matmul_nn(dk.ptr(), rk, d_, wk_.ptr(), d_, dxkv.ptr());
    matmul_nn(dv.ptr(), rk, d_, wv_.ptr(), d_, dxkv.ptr(), true);
    return {std::move(dxq), std::move(dxkv)};
  }

  std::vector<ParamView<T>> params(const std::string& prefix) {
    return {{prefix + ".wq", &wq_, &gwq_},
            {prefix + ".wk", &wk_, &gwk_},
            {prefix + ".wv", &wv_, &gwv_},
            {prefix + ".wo", &wo_, &gwo_}};
  }

 private:
  ConstStridedView<T> head_view(const Tensor<T>& t, int b, int L, int h) const {
    return ConstStridedView<T>(t.ptr() + (static_cast<int64_t>(b) * L) * d_ + h * dh_, L, dh_,
                               Eigen::OuterStride<>(d_));
  }
  T* probs_slice(int b, int h) {
    const int Lq = probs_.dim(2), Lk = probs_.dim(3);
    return probs_.ptr() + ((static_cast<int64_t>(b) * heads_ + h) * Lq) * Lk;
  }

  static void softmax_row(T* row, int n) {
    T mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    T sum = 0;
    for (int j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    T inv = T(1) / sum;
    for (int j = 0; j < n; ++j) row[j] *= inv;
  }

  int d_, heads_, dh_;
  bool causal_ = false;
  Tensor<T> wq_, gwq_, wk_, gwk_, wv_, gwv_, wo_, gwo_;
  Tensor<T> xq_, xkv_, q_, k_, v_, probs_, ctx_;
};

// ---------------------------------------------------------------------------
// Softmax cross-entropy head
// ---------------------------------------------------------------------------

// logits: [N, V]; labels: size N with ignore_label marking dead rows.
// Returns {mean loss over live rows (double accumulation), live count} and
// fills dlogits with d(mean loss)/d(logits).
template <typename T>
std::pair<double, int> softmax_cross_entropy(const Tensor<T>& logits,
                                             const std::vector<int>& labels, int ignore_label,
                                             Tensor<T>* dlogits) {
  const int V = logits.dim(logits.rank() - 1);
  const int64_t N = logits.numel() / V;
  if (dlogits) {
    *dlogits = Tensor<T>(logits.shape);
  }
  double total = 0;
  int counted = 0;
  for (int64_t i = 0; i < N; ++i)
    if (labels[static_cast<size_t>(i)] != ignore_label) ++counted;
  if (counted == 0) return {0.0, 0};

  std::vector<T> p(static_cast<size_t>(V));
  for (int64_t i = 0; i < N; ++i) {
    const int label = labels[static_cast<size_t>(i)];
    const T* row = logits.ptr() + i * V;
    if (label == ignore_label) continue;
    T mx = row[0];
    for (int j = 1; j < V; ++j) mx = std::max(mx, row[j]);
    double sum = 0;
    for (int j = 0; j < V; ++j) {
      p[static_cast<size_t>(j)] = std::exp(row[j] - mx);
      sum += static_cast<double>(p[static_cast<size_t>(j)]);
    }
    total += std::log(sum) - static_cast<double>(row[label] - mx);
    if (dlogits) {
      T* drow = dlogits->ptr() + i * V;
      T inv = static_cast<T>(1.0 / sum);
      T w = static_cast<T>(1.0 / counted);
      for (int j = 0; j < V; ++j) drow[j] = p[static_cast<size_t>(j)] * inv * w;
      drow[label] -= w;
    }
  }
  return {total / counted, counted};
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename T>
class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(const std::vector<ParamView<T>>& params) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.value->numel(), T(0));
        v_.emplace_back(p.value->numel(), T(0));
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
      T* w = params[i].value->ptr();
      const T* g = params[i].grad->ptr();
      T* m = m_[i].data();
      T* v = v_[i].data();
      const int64_t n = params[i].value->numel();
      for (int64_t j = 0; j < n; ++j) {
        m[j] = static_cast<T>(b1_ * m[j] + (1.0 - b1_) * g[j]);
        v[j] = static_cast<T>(b2_ * v[j] + (1.0 - b2_) * static_cast<double>(g[j]) * g[j]);
        double mhat = m[j] / c1;
        double vhat = v[j] / c2;
        w[j] -= static_cast<T>(lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_, b1_, b2_, eps_;
  long long t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

}  // namespace respec::nn
