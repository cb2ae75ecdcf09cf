#include "respec/cnn.hpp"

namespace respec::nn {

int64_t cnn_param_count(const dsl::CnnSpec& spec) {
  dsl::ConvShape shape = dsl::propagate_conv_shape(spec);
  if (!shape.valid) throw BuildError(shape.issue);
  int64_t total = 0;
  int64_t in_ch = spec.input_c;
  for (int out_ch : spec.channels) {
    total += static_cast<int64_t>(out_ch) * (in_ch * 9 + 1);  // 3x3 weights + bias
    in_ch = out_ch;
  }
  int64_t in_features = shape.flatten;
  for (int width : spec.hidden_sizes) {
    total += static_cast<int64_t>(width) * (in_features + 1);
    in_features = width;
  }
  total += static_cast<int64_t>(spec.num_classes) * (in_features + 1);
  return total;
}

}  // namespace respec::nn
