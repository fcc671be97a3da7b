#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ops.hpp"
#include "tensor.hpp"

namespace sasnet {

// Backbone layer geometry: conv1(s2) relu pool1(3,s2) conv2(s1) relu
// pool2(3,s2) conv3(s1) relu conv4(s1) relu conv5(s1). No activation after
// conv5, so correlation responses stay signed.
struct ConvSpec {
    int out_ch, in_ch, kernel, stride;
};

inline constexpr std::array<ConvSpec, 5> kConvSpecs = {{
    {96, 3, 11, 2},
    {256, 96, 5, 1},
    {192, 256, 3, 1},
    {192, 192, 3, 1},
    {128, 192, 3, 1},
}};

inline constexpr int kPoolWindow = 3;
inline constexpr int kPoolStride = 2;
inline constexpr int kFeatureChannels = 128;
inline constexpr int kAttentionGrid = 4;
inline constexpr int kAttentionParamCount = 4 * 4 * 128; // 2048
inline constexpr int kTotalStride = 8;                   // 2 * 2 * 2
inline constexpr int kMinBackboneInput = 87;             // 8 * 1 + 79
inline constexpr int kExemplarSide = 127;
inline constexpr int kInstanceSide = 255;
inline constexpr int kSemanticFeatSide = 22;

// All learnable state. Backbone tensors plus the response affine form the
// theta_s group; the attention planes are theta_att.
struct SasNetParams {
    std::array<Tensor, 5> conv_w; // O x C x k x k
    std::array<Tensor, 5> conv_b; // O
    Tensor att_w;                 // 128 x 4 x 4, no bias
    double response_scale = 1e-3;
    double response_bias = 0.0;
};

// Gradient accumulator mirroring SasNetParams.
struct SasNetGrads {
    std::array<Tensor, 5> conv_w;
    std::array<Tensor, 5> conv_b;
    Tensor att_w;
    double response_scale = 0.0;
    double response_bias = 0.0;

    void zero();
    void add_scaled(const SasNetGrads& other, double s);
    double squared_norm() const;
};

SasNetGrads make_grads();

enum class ParamGroup { backbone, attention };

// Flat view over one parameter (or gradient) tensor, in canonical order:
// conv1.w, conv1.b, ..., conv5.w, conv5.b, att.w, response.scale,
// response.bias.
struct ParamRef {
    std::string name;
    double* data;
    std::size_t size;
    ParamGroup group;
};

std::vector<ParamRef> param_refs(SasNetParams& p);
std::vector<ParamRef> grad_refs(SasNetGrads& g);

// He-initialized conv weights, zero biases, Gaussian(0, 1/16) attention
// planes, response affine (0.001, 0). Deterministic given the seed.
SasNetParams init_params(std::uint64_t seed);

void validate_params(const SasNetParams& p); // shapes + 2048 attention count
bool params_finite(const SasNetParams& p, std::string* offender = nullptr);

// Cached activations of one backbone pass, needed by the backward pass.
struct BackboneTrace {
    Tensor input;
    std::array<Tensor, 5> conv_out; // pre-activation
    std::array<Tensor, 5> act_out;  // post-relu (conv5: same as conv_out)
    std::array<std::vector<double>, 5> cols; // im2col buffers, reused backward
    Tensor pool1, pool2;
    std::vector<std::int64_t> pool1_arg, pool2_arg;
};

// image 3 x H x W -> feature 128 x h x w. H, W >= 87. Shape failures name the
// offending layer.
Tensor backbone_forward(const Tensor& image, const SasNetParams& p,
                        BackboneTrace* trace = nullptr);

// Accumulates parameter gradients (and optionally the image gradient).
void backbone_backward(const BackboneTrace& trace, const SasNetParams& p,
                       const Tensor& d_feat, SasNetGrads& grads,
                       Tensor* d_image = nullptr);

// Number of backbone_forward invocations in this process (op-count probe).
std::uint64_t backbone_forward_calls();

// 22x22 -> 4x4 per-channel block max with axis partition {0,6,11,16,22}.
inline constexpr std::array<int, 5> kGridBounds = {0, 6, 11, 16, 22};
Tensor grid_maxpool(const Tensor& semantic_feat,
                    std::vector<std::int64_t>* argmax = nullptr);

struct AttentionTrace {
    Tensor gmp; // 128 x 4 x 4
    std::vector<std::int64_t> gmp_arg;
    Tensor pre;     // 128, pre-sigmoid
    Tensor weights; // 128, in (0,1)
};

// weights[i] = sigmoid(sum(att_w[i] * grid_maxpool(feat)[i])); per channel,
// no cross-channel mixing, no bias.
Tensor attention_forward(const Tensor& semantic_feat, const SasNetParams& p,
                         AttentionTrace* trace = nullptr);

void attention_backward(const AttentionTrace& trace, const std::vector<int>& feat_dims,
                        const SasNetParams& p, const Tensor& d_weights,
                        SasNetGrads& grads, Tensor* d_feat = nullptr);

struct ResponseMap {
    Tensor raw;       // 1 x h x w cross-correlation
    Tensor activated; // sigmoid(scale * raw + bias)
    int peak_row = 0, peak_col = 0; // argmax of raw
};

ResponseMap make_response(const Tensor& raw, const SasNetParams& p);

struct BilinearTrace {
    BackboneTrace z, x;
    Tensor feat_z, feat_x;
};

// Stage-1 path: R = xcorr(phi(Z), phi(X)), then the affine+sigmoid readout.
ResponseMap bilinear_forward(const Tensor& z, const Tensor& x, const SasNetParams& p,
                             BilinearTrace* trace = nullptr);

struct SasNetTrace {
    BackboneTrace z, x, zs;
    AttentionTrace att;
    Tensor feat_z, feat_x, feat_zs;
    Tensor weighted_z, weighted_x;
    Tensor weights;
};

// Full Eq.-style forward: channel weights from the semantic branch scale both
// exemplar and instance features before correlation.
ResponseMap sasnet_forward(const Tensor& z, const Tensor& zs, const Tensor& x,
                           const SasNetParams& p, SasNetTrace* trace = nullptr);

// Backward of d(raw response) through the stage-1 / stage-2 graphs.
void bilinear_backward(const BilinearTrace& trace, const SasNetParams& p,
                       const Tensor& d_raw, SasNetGrads& grads);
void sasnet_backward(const SasNetTrace& trace, const SasNetParams& p,
                     const Tensor& d_raw, SasNetGrads& grads);

} // namespace sasnet
