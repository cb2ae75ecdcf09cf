#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "respec/dsl.hpp"
#include "respec/errors.hpp"
#include "respec/nn.hpp"
#include "respec/rng.hpp"

namespace respec::nn {

struct TaskShape {
  int h = 28, w = 28, c = 1;
  int classes = 10;
};

// Reshape between the conv stack ([B, C, H, W]) and the linear stack
// ([B, C*H*W]).
template <typename T>
class Flatten {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    in_shape_ = x.shape;
    return x.reshaped({x.dim(0), static_cast<int>(x.numel() / x.dim(0))});
  }
  Tensor<T> backward(const Tensor<T>& dy) { return dy.reshaped(in_shape_); }

 private:
  std::vector<int> in_shape_;
};

// Feed-forward image classifier: ordered op list ending in class logits.
template <typename T>
class CnnModel {
 public:
  using Op = std::variant<Conv2d<T>, MaxPool2d<T>, Flatten<T>, Linear<T>, ReLU<T>>;

  void add(Op op) { ops_.push_back(std::move(op)); }

  // x: [B, C, H, W] -> logits [B, classes]
  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> cur = x;
    for (auto& op : ops_)
      cur = std::visit([&](auto& layer) { return layer.forward(cur); }, op);
    return cur;
  }

  // dlogits -> dx (parameter grads accumulate inside the layers)
  Tensor<T> backward(const Tensor<T>& dlogits) {
    Tensor<T> cur = dlogits;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it)
      cur = std::visit([&](auto& layer) { return layer.backward(cur); }, *it);
    return cur;
  }

  std::vector<ParamView<T>> params() {
    std::vector<ParamView<T>> out;
    int i = 0;
    for (auto& op : ops_) {
      std::string prefix = "op" + std::to_string(i++);
      std::visit(
          [&](auto& layer) {
            using L = std::decay_t<decltype(layer)>;
            if constexpr (std::is_same_v<L, Conv2d<T>> || std::is_same_v<L, Linear<T>>) {
              for (auto& p : layer.params(prefix)) out.push_back(p);
            }
          },
          op);
    }
    return out;
  }

  int64_t param_count() { return nn::param_count(params()); }
  size_t op_count() const { return ops_.size(); }

 private:
  std::vector<Op> ops_;
};

// Closed-form parameter count for a spec (weights + biases), without
// instantiating anything. Throws BuildError if shapes do not propagate.
int64_t cnn_param_count(const dsl::CnnSpec& spec);

// Instantiates a spec against a task. The spec's declared input shape and
// class count must match the task exactly. `max_params` > 0 rejects
// oversized models (resource guard) with BuildError.
template <typename T>
CnnModel<T> build_cnn(const dsl::CnnSpec& spec, const TaskShape& task, uint64_t init_seed,
                      int64_t max_params = 0) {
  if (spec.input_h != task.h || spec.input_w != task.w || spec.input_c != task.c)
    throw BuildError("spec expects input " + std::to_string(spec.input_h) + "x" +
                     std::to_string(spec.input_w) + "x" + std::to_string(spec.input_c) +
                     " but the task provides " + std::to_string(task.h) + "x" +
                     std::to_string(task.w) + "x" + std::to_string(task.c));
  if (spec.num_classes != task.classes)
    throw BuildError("spec has " + std::to_string(spec.num_classes) + " classes but the task has " +
                     std::to_string(task.classes));
  dsl::ConvShape shape = dsl::propagate_conv_shape(spec);
  if (!shape.valid) throw BuildError(shape.issue);
  if (spec.hidden_sizes.empty()) throw BuildError("spec has no hidden linear stack");
  int64_t count = cnn_param_count(spec);
  if (max_params > 0 && count > max_params)
    throw BuildError("model has " + std::to_string(count) + " parameters, over the budget of " +
                     std::to_string(max_params));

  CnnModel<T> model;
  Rng root(mix64(init_seed));
  int layer_idx = 0;
  int in_ch = spec.input_c;
  for (int out_ch : spec.channels) {
    model.add(Conv2d<T>(in_ch, out_ch, root.split(static_cast<uint64_t>(layer_idx++))));
    model.add(ReLU<T>());
    in_ch = out_ch;
  }
  if (spec.pool_after_convs) model.add(MaxPool2d<T>());
  model.add(Flatten<T>());
  int in_features = shape.flatten;
  for (int width : spec.hidden_sizes) {
    model.add(
        Linear<T>(in_features, width, true, root.split(static_cast<uint64_t>(layer_idx++))));
    model.add(ReLU<T>());
    in_features = width;
  }
  model.add(Linear<T>(in_features, spec.num_classes, true,
                      root.split(static_cast<uint64_t>(layer_idx++))));
  return model;
}

}  // namespace respec::nn
