#pragma once

#include <cstdint>
#include <vector>

#include "tensor.hpp"

namespace sasnet {

// All operations are pure functions of their inputs and safe to call
// concurrently. Gradients are analytic; each backward consumes the same
// arguments its forward saw (plus cached argmax indices for pooling).

// input C x H x W, kernels O x C x kh x kw -> O x H' x W'. Zero padding.
Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int pad);

// Same, but hands the unrolled column matrix back so the backward pass can
// reuse it instead of re-unrolling the input.
Tensor conv2d_keep_cols(const Tensor& input, const Tensor& kernels, int stride,
                        int pad, std::vector<double>& cols_out);

struct Conv2dGrads {
    Tensor d_input;
    Tensor d_kernels;
};
Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& kernels, int stride,
                            int pad, const Tensor& d_out, bool need_d_input = true,
                            const std::vector<double>* cols = nullptr);

// Adds bias[o] to every cell of output channel o, in place.
void add_channel_bias(Tensor& t, const Tensor& bias);
Tensor channel_bias_backward(const Tensor& d_out); // d_bias, length O

// Per-channel max pooling, pad 0. argmax (flat input offsets) is filled when
// non-null; ties go to the first maximal element in row-major scan order.
Tensor maxpool2d(const Tensor& input, int window, int stride,
                 std::vector<std::int64_t>* argmax = nullptr);
Tensor maxpool2d_backward(const std::vector<std::int64_t>& argmax,
                          const std::vector<int>& input_dims, const Tensor& d_out);

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& d_out); // subgradient 0 at 0

Tensor sigmoid(const Tensor& x);
Tensor sigmoid_backward(const Tensor& y, const Tensor& d_out); // y = sigmoid(x)

double sigmoid_scalar(double x);

// Exemplar feature slides over the instance feature, stride 1, pad 0; each
// output cell is the full C x h x w inner product. Output 1 x H' x W'.
Tensor xcorr(const Tensor& exemplar, const Tensor& instance);

struct XcorrGrads {
    Tensor d_exemplar;
    Tensor d_instance;
};
XcorrGrads xcorr_backward(const Tensor& exemplar, const Tensor& instance,
                          const Tensor& d_out);

// Multiplies every cell of channel i by weights[i] (weights rank 1, length C).
Tensor channel_scale(const Tensor& feat, const Tensor& weights);

struct ChannelScaleGrads {
    Tensor d_feat;
    Tensor d_weights;
};
ChannelScaleGrads channel_scale_backward(const Tensor& feat, const Tensor& weights,
                                         const Tensor& d_out);

// Bicubic upsampling (Keys kernel, a = -0.5, clamp-to-edge) on the cell-center
// grid: C x H x W -> C x (H*factor) x (W*factor). Factor 1 is the identity.
Tensor upsample_bicubic(const Tensor& map, int factor);

} // namespace sasnet
