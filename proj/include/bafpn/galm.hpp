#pragma once

#include "bafpn/nn.hpp"
#include "bafpn/tensor.hpp"

namespace bafpn {

// Grouped aggregation lateral connection. A single shared 1x1 kernel maps each
// of the g input channel groups to C_out channels; the t-th outputs across
// groups form a semantic group, and a learned scalar mix combines all of them
// into each final channel.
template <typename T>
struct GalmParams {
  Tensor<T> shared_w;  // [C_out, C_in/g, 1, 1]
  Tensor<T> shared_b;  // [C_out]
  Tensor<T> mix_w;     // [C_out(s), g(j), C_out(t)]
  std::int64_t groups = 1;
};

// out[s] = sum_t sum_j mix_w[s,j,t] * hat[j,t], identical at every pixel.
template <typename T>
Tensor<T> galm_forward(const Tensor<T>& x, const GalmParams<T>& p) {
  const std::int64_t c_out = p.shared_w.dim(0);
  auto hat = shared_group_conv1x1(x, p.groups, p.shared_w, p.shared_b);
  // hat channels are group-major (j,t), which is exactly the row-major
  // flattening of mix_w's trailing axes
  auto wmix = reshape_copy(p.mix_w, Shape{c_out, p.groups * c_out, 1, 1});
  ConvSpec spec = conv1x1_spec(p.groups * c_out, c_out, /*bias=*/false);
  return conv2d(hat, spec, wmix);
}

inline std::int64_t galm_param_count(std::int64_t c_in, std::int64_t c_out, std::int64_t g) {
  if (g < 1 || c_in % g != 0) {
    throw ConfigError("galm_param_count: groups " + std::to_string(g) + " do not divide " +
                      std::to_string(c_in) + " input channels");
  }
  return c_out * (c_in / g) + c_out + c_out * g * c_out;
}

}  // namespace bafpn
