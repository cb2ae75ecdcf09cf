#pragma once

#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "respec/cnn.hpp"
#include "respec/data_io.hpp"
#include "respec/errors.hpp"
#include "respec/nn.hpp"
#include "respec/rng.hpp"

namespace respec::nn {

struct TrainConfig {
  std::string optimizer = "adam";  // adam | sgd
  double lr = 1e-3;
  int batch_size = 32;
  int epochs = 1;
  long long max_steps = 0;  // 0 = no cap
  bool shuffle = true;      // per-epoch reshuffle of the index order
  uint64_t seed = 0;
  double time_cap_s = 0;  // 0 = no cap; checked between steps
};

struct TrainReport {
  std::vector<double> epoch_losses;  // mean step loss per completed epoch
  std::vector<float> step_losses;
  long long steps = 0;
  double avg_step_loss() const {
    if (step_losses.empty()) return std::nan("");
    double s = 0;
    for (float v : step_losses) s += v;
    return s / static_cast<double>(step_losses.size());
  }
};

class Deadline {
 public:
  explicit Deadline(double seconds) {
    if (seconds > 0) at_ = std::chrono::steady_clock::now() + std::chrono::duration_cast<
                              std::chrono::steady_clock::duration>(
                              std::chrono::duration<double>(seconds));
  }
  bool expired() const {
    return at_.has_value() && std::chrono::steady_clock::now() >= *at_;
  }

 private:
  std::optional<std::chrono::steady_clock::time_point> at_;
};

// Copies the images selected by `indices` into a [B, C, H, W] batch.
template <typename T>
Tensor<T> make_batch(const data::ImageDataset& ds, const std::vector<int>& indices, size_t begin,
                     size_t end, std::vector<int>* labels) {
  const int bs = static_cast<int>(end - begin);
  Tensor<T> x({bs, ds.c, ds.h, ds.w});
  const int64_t sz = ds.image_size();
  if (labels) labels->resize(static_cast<size_t>(bs));
  for (int i = 0; i < bs; ++i) {
    const float* src = ds.image(indices[begin + static_cast<size_t>(i)]);
    T* dst = x.ptr() + static_cast<int64_t>(i) * sz;
    for (int64_t j = 0; j < sz; ++j) dst[j] = static_cast<T>(src[j]);
    if (labels)
      (*labels)[static_cast<size_t>(i)] = ds.labels[static_cast<size_t>(
          indices[begin + static_cast<size_t>(i)])];
  }
  return x;
}

template <typename T>
void apply_sgd(const std::vector<ParamView<T>>& params, double lr) {
  for (const auto& p : params) {
    T* w = p.value->ptr();
    const T* g = p.grad->ptr();
    for (int64_t j = 0; j < p.value->numel(); ++j) w[j] -= static_cast<T>(lr) * g[j];
  }
}

// Minibatch cross-entropy training over the images selected by `indices`.
// Throws DivergenceError when a step loss goes non-finite and TimeoutError
// when the wall budget runs out between steps.
template <typename T>
TrainReport train_classifier(CnnModel<T>& model, const data::ImageDataset& ds,
                             const std::vector<int>& indices, const TrainConfig& cfg) {
  TrainReport report;
  if (indices.empty() || cfg.epochs <= 0) return report;
  auto params = model.params();
  Adam<T> adam(cfg.lr);
  Deadline deadline(cfg.time_cap_s);
  Rng order_rng(mix64(cfg.seed ^ 0x7261696eull));

  std::vector<int> order = indices;
  std::vector<int> labels;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) shuffle(order, order_rng);
    double epoch_sum = 0;
    long long epoch_steps = 0;
    for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(cfg.batch_size)) {
      if (cfg.max_steps > 0 && report.steps >= cfg.max_steps) break;
      if (deadline.expired())
        throw TimeoutError("classifier training exceeded its wall-clock budget");
      size_t end = std::min(order.size(), begin + static_cast<size_t>(cfg.batch_size));
      Tensor<T> x = make_batch<T>(ds, order, begin, end, &labels);
      Tensor<T> logits = model.forward(x);
      Tensor<T> dlogits;
      auto [loss, counted] = softmax_cross_entropy(logits, labels, -1, &dlogits);
      (void)counted;
      if (!std::isfinite(loss)) throw DivergenceError("training loss became non-finite");
      zero_grads(params);
      model.backward(dlogits);
      if (cfg.optimizer == "sgd")
        apply_sgd(params, cfg.lr);
      else
        adam.step(params);
      report.step_losses.push_back(static_cast<float>(loss));
      epoch_sum += loss;
      ++report.steps;
      ++epoch_steps;
    }
    if (epoch_steps > 0) report.epoch_losses.push_back(epoch_sum / epoch_steps);
    if (cfg.max_steps > 0 && report.steps >= cfg.max_steps) break;
  }
  return report;
}

// Fraction of correctly argmax-classified images (ties -> lowest index).
template <typename T>
double classifier_accuracy(CnnModel<T>& model, const data::ImageDataset& ds,
                           const std::vector<int>& indices, int batch_size = 256) {
  if (indices.empty()) return std::nan("");
  long long correct = 0;
  std::vector<int> labels;
  for (size_t begin = 0; begin < indices.size(); begin += static_cast<size_t>(batch_size)) {
    size_t end = std::min(indices.size(), begin + static_cast<size_t>(batch_size));
    Tensor<T> x = make_batch<T>(ds, indices, begin, end, &labels);
    Tensor<T> logits = model.forward(x);
    const int classes = logits.dim(1);
    for (size_t i = 0; i < end - begin; ++i) {
      const T* row = logits.ptr() + static_cast<int64_t>(i) * classes;
      int best = 0;
      for (int j = 1; j < classes; ++j)
        if (row[j] > row[best]) best = j;
      if (best == labels[i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

}  // namespace respec::nn
