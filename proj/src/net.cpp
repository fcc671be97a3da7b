#include "net.hpp"

#include <atomic>
#include <cmath>
#include <random>

namespace sasnet {

namespace {

std::atomic<std::uint64_t> g_backbone_calls{0};

const char* layer_name(int i) {
    static const char* names[5] = {"conv1", "conv2", "conv3", "conv4", "conv5"};
    return names[i];
}

} // namespace

void SasNetGrads::zero() {
    for (auto& t : conv_w)
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.0;
    for (auto& t : conv_b)
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.0;
    for (std::size_t i = 0; i < att_w.size(); ++i) att_w[i] = 0.0;
    response_scale = 0.0;
    response_bias = 0.0;
}

void SasNetGrads::add_scaled(const SasNetGrads& other, double s) {
    for (int l = 0; l < 5; ++l) {
        for (std::size_t i = 0; i < conv_w[l].size(); ++i) conv_w[l][i] += s * other.conv_w[l][i];
        for (std::size_t i = 0; i < conv_b[l].size(); ++i) conv_b[l][i] += s * other.conv_b[l][i];
    }
    for (std::size_t i = 0; i < att_w.size(); ++i) att_w[i] += s * other.att_w[i];
    response_scale += s * other.response_scale;
    response_bias += s * other.response_bias;
}

double SasNetGrads::squared_norm() const {
    double acc = 0.0;
    for (const auto& t : conv_w)
        for (std::size_t i = 0; i < t.size(); ++i) acc += t[i] * t[i];
    for (const auto& t : conv_b)
        for (std::size_t i = 0; i < t.size(); ++i) acc += t[i] * t[i];
    for (std::size_t i = 0; i < att_w.size(); ++i) acc += att_w[i] * att_w[i];
    acc += response_scale * response_scale + response_bias * response_bias;
    return acc;
}

SasNetGrads make_grads() {
    SasNetGrads g;
    for (int l = 0; l < 5; ++l) {
        const ConvSpec& s = kConvSpecs[l];
        g.conv_w[l] = Tensor({s.out_ch, s.in_ch, s.kernel, s.kernel});
        g.conv_b[l] = Tensor({s.out_ch});
    }
    g.att_w = Tensor({kFeatureChannels, kAttentionGrid, kAttentionGrid});
    return g;
}

namespace {

template <typename Params>
std::vector<ParamRef> make_refs(Params& p) {
    std::vector<ParamRef> refs;
    for (int l = 0; l < 5; ++l) {
        std::string base = layer_name(l);
        refs.push_back({base + ".w", p.conv_w[l].data(), p.conv_w[l].size(), ParamGroup::backbone});
        refs.push_back({base + ".b", p.conv_b[l].data(), p.conv_b[l].size(), ParamGroup::backbone});
    }
    refs.push_back({"att.w", p.att_w.data(), p.att_w.size(), ParamGroup::attention});
    refs.push_back({"response.scale", &p.response_scale, 1, ParamGroup::backbone});
    refs.push_back({"response.bias", &p.response_bias, 1, ParamGroup::backbone});
    return refs;
}

} // namespace

std::vector<ParamRef> param_refs(SasNetParams& p) { return make_refs(p); }
std::vector<ParamRef> grad_refs(SasNetGrads& g) { return make_refs(g); }

SasNetParams init_params(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);

    SasNetParams p;
    for (int l = 0; l < 5; ++l) {
        const ConvSpec& s = kConvSpecs[l];
        p.conv_w[l] = Tensor({s.out_ch, s.in_ch, s.kernel, s.kernel});
        const double std_dev = std::sqrt(2.0 / (s.in_ch * s.kernel * s.kernel));
        for (std::size_t i = 0; i < p.conv_w[l].size(); ++i) p.conv_w[l][i] = std_dev * unit(rng);
        p.conv_b[l] = Tensor({s.out_ch});
    }
    p.att_w = Tensor({kFeatureChannels, kAttentionGrid, kAttentionGrid});
    for (std::size_t i = 0; i < p.att_w.size(); ++i) p.att_w[i] = unit(rng) / 16.0;
    p.response_scale = 1e-3;
    p.response_bias = 0.0;
    validate_params(p);
    return p;
}

void validate_params(const SasNetParams& p) {
    for (int l = 0; l < 5; ++l) {
        const ConvSpec& s = kConvSpecs[l];
        const std::vector<int> want_w = {s.out_ch, s.in_ch, s.kernel, s.kernel};
        if (p.conv_w[l].dims() != want_w)
            throw FormatError(std::string(layer_name(l)) + ".w has shape " +
                              p.conv_w[l].shape_str() + ", expected " +
                              Tensor(want_w).shape_str());
        if (p.conv_b[l].rank() != 1 || p.conv_b[l].dim(0) != s.out_ch)
            throw FormatError(std::string(layer_name(l)) + ".b has shape " +
                              p.conv_b[l].shape_str());
    }
    const std::vector<int> want_att = {kFeatureChannels, kAttentionGrid, kAttentionGrid};
    if (p.att_w.dims() != want_att)
        throw FormatError("att.w has shape " + p.att_w.shape_str() + ", expected [128x4x4]");
    if (p.att_w.size() != kAttentionParamCount)
        throw FormatError("attention parameter count is not 2048");
}

bool params_finite(const SasNetParams& p, std::string* offender) {
    auto check = [&](const Tensor& t, const char* name) {
        for (std::size_t i = 0; i < t.size(); ++i)
            if (!std::isfinite(t[i])) {
                if (offender) *offender = name;
                return false;
            }
        return true;
    };
    for (int l = 0; l < 5; ++l) {
        if (!check(p.conv_w[l], layer_name(l))) return false;
        if (!check(p.conv_b[l], layer_name(l))) return false;
    }
    if (!check(p.att_w, "att.w")) return false;
    if (!std::isfinite(p.response_scale) || !std::isfinite(p.response_bias)) {
        if (offender) *offender = "response affine";
        return false;
    }
    return true;
}

Tensor backbone_forward(const Tensor& image, const SasNetParams& p, BackboneTrace* trace) {
    if (image.rank() != 3 || image.dim(0) != 3)
        throw ShapeError("backbone input must be 3 x H x W, got " + image.shape_str());
    if (image.dim(1) < kMinBackboneInput || image.dim(2) < kMinBackboneInput)
        throw ShapeError("backbone input " + image.shape_str() + " below the minimum of " +
                         std::to_string(kMinBackboneInput) +
                         " px per axis (conv5 output would be empty)");
    g_backbone_calls.fetch_add(1, std::memory_order_relaxed);

    BackboneTrace local;
    BackboneTrace& tr = trace ? *trace : local;
    tr.input = image;

    const Tensor* cur = &tr.input;
    for (int l = 0; l < 5; ++l) {
        try {
            if (trace)
                tr.conv_out[l] =
                    conv2d_keep_cols(*cur, p.conv_w[l], kConvSpecs[l].stride, 0, tr.cols[l]);
            else
                tr.conv_out[l] = conv2d(*cur, p.conv_w[l], kConvSpecs[l].stride, 0);
        } catch (const ShapeError& e) {
            throw ShapeError(std::string(layer_name(l)) + ": " + e.what());
        }
        add_channel_bias(tr.conv_out[l], p.conv_b[l]);
        tr.act_out[l] = l < 4 ? relu(tr.conv_out[l]) : tr.conv_out[l];
        cur = &tr.act_out[l];
        if (l == 0) {
            try {
                tr.pool1 = maxpool2d(*cur, kPoolWindow, kPoolStride, &tr.pool1_arg);
            } catch (const ShapeError& e) {
                throw ShapeError(std::string("pool1: ") + e.what());
            }
            cur = &tr.pool1;
        } else if (l == 1) {
            try {
                tr.pool2 = maxpool2d(*cur, kPoolWindow, kPoolStride, &tr.pool2_arg);
            } catch (const ShapeError& e) {
                throw ShapeError(std::string("pool2: ") + e.what());
            }
            cur = &tr.pool2;
        }
    }
    return tr.act_out[4];
}

void backbone_backward(const BackboneTrace& trace, const SasNetParams& p,
                       const Tensor& d_feat, SasNetGrads& grads, Tensor* d_image) {
    // conv5 has no activation
    Tensor d = d_feat;
    for (int l = 4; l >= 0; --l) {
        if (l < 4) d = relu_backward(trace.conv_out[l], d);
        const Tensor& input = l == 0   ? trace.input
                              : l == 1 ? trace.pool1
                              : l == 2 ? trace.pool2
                                       : trace.act_out[l - 1];
        const bool need_dx = l > 0 || d_image != nullptr;
        Conv2dGrads cg = conv2d_backward(input, p.conv_w[l], kConvSpecs[l].stride, 0, d,
                                         need_dx, &trace.cols[l]);
        for (std::size_t i = 0; i < cg.d_kernels.size(); ++i) grads.conv_w[l][i] += cg.d_kernels[i];
        Tensor db = channel_bias_backward(d);
        for (std::size_t i = 0; i < db.size(); ++i) grads.conv_b[l][i] += db[i];

        if (l == 0) {
            if (d_image) *d_image = std::move(cg.d_input);
            return;
        }
        d = std::move(cg.d_input);
        if (l == 2)
            d = maxpool2d_backward(trace.pool2_arg, trace.act_out[1].dims(), d);
        else if (l == 1)
            d = maxpool2d_backward(trace.pool1_arg, trace.act_out[0].dims(), d);
    }
}

std::uint64_t backbone_forward_calls() { return g_backbone_calls.load(); }

Tensor grid_maxpool(const Tensor& feat, std::vector<std::int64_t>* argmax) {
    if (feat.rank() != 3 || feat.dim(1) != kSemanticFeatSide || feat.dim(2) != kSemanticFeatSide)
        throw ShapeError("grid_maxpool expects C x 22 x 22, got " + feat.shape_str());
    const int c_n = feat.dim(0);
    Tensor out({c_n, kAttentionGrid, kAttentionGrid});
    if (argmax) argmax->assign(out.size(), 0);

    std::size_t oi = 0;
    for (int c = 0; c < c_n; ++c) {
        const double* plane = feat.data() + static_cast<std::size_t>(c) * 22 * 22;
        for (int by = 0; by < 4; ++by) {
            for (int bx = 0; bx < 4; ++bx, ++oi) {
                double best = plane[static_cast<std::size_t>(kGridBounds[by]) * 22 + kGridBounds[bx]];
                std::int64_t best_idx = static_cast<std::int64_t>(kGridBounds[by]) * 22 + kGridBounds[bx];
                for (int y = kGridBounds[by]; y < kGridBounds[by + 1]; ++y) {
                    const double* row = plane + static_cast<std::size_t>(y) * 22;
                    for (int x = kGridBounds[bx]; x < kGridBounds[bx + 1]; ++x) {
                        if (row[x] > best) {
                            best = row[x];
                            best_idx = static_cast<std::int64_t>(y) * 22 + x;
                        }
                    }
                }
                out[oi] = best;
                if (argmax) (*argmax)[oi] = static_cast<std::int64_t>(c) * 22 * 22 + best_idx;
            }
        }
    }
    return out;
}

Tensor attention_forward(const Tensor& feat, const SasNetParams& p, AttentionTrace* trace) {
    if (feat.dim(0) != kFeatureChannels)
        throw ShapeError("attention expects 128 channels, got " + feat.shape_str());
    AttentionTrace local;
    AttentionTrace& tr = trace ? *trace : local;
    tr.gmp = grid_maxpool(feat, &tr.gmp_arg);

    tr.pre = Tensor({kFeatureChannels});
    const std::size_t cells = kAttentionGrid * kAttentionGrid;
    for (int c = 0; c < kFeatureChannels; ++c) {
        const double* g = tr.gmp.data() + c * cells;
        const double* w = p.att_w.data() + c * cells;
        double acc = 0.0;
        for (std::size_t i = 0; i < cells; ++i) acc += g[i] * w[i];
        tr.pre[c] = acc;
    }
    tr.weights = sigmoid(tr.pre);
    return tr.weights;
}

void attention_backward(const AttentionTrace& trace, const std::vector<int>& feat_dims,
                        const SasNetParams& p, const Tensor& d_weights,
                        SasNetGrads& grads, Tensor* d_feat) {
    const Tensor d_pre = sigmoid_backward(trace.weights, d_weights);
    const std::size_t cells = kAttentionGrid * kAttentionGrid;
    Tensor d_gmp(trace.gmp.dims());
    for (int c = 0; c < kFeatureChannels; ++c) {
        const double dp = d_pre[c];
        const double* g = trace.gmp.data() + c * cells;
        const double* w = p.att_w.data() + c * cells;
        double* dw = grads.att_w.data() + c * cells;
        double* dg = d_gmp.data() + c * cells;
        for (std::size_t i = 0; i < cells; ++i) {
            dw[i] += dp * g[i];
            dg[i] = dp * w[i];
        }
    }
    if (d_feat)
        *d_feat = maxpool2d_backward(trace.gmp_arg, feat_dims, d_gmp);
}

ResponseMap make_response(const Tensor& raw, const SasNetParams& p) {
    ResponseMap r;
    r.raw = raw;
    Tensor squashed(raw.dims());
    for (std::size_t i = 0; i < raw.size(); ++i)
        squashed[i] = p.response_scale * raw[i] + p.response_bias;
    r.activated = sigmoid(squashed);

    const int h = raw.dim(1), w = raw.dim(2);
    std::size_t best = 0;
    for (std::size_t i = 1; i < raw.size(); ++i)
        if (raw[i] > raw[best]) best = i;
    r.peak_row = static_cast<int>(best) / w;
    r.peak_col = static_cast<int>(best) % w;
    (void)h;
    return r;
}

ResponseMap bilinear_forward(const Tensor& z, const Tensor& x, const SasNetParams& p,
                             BilinearTrace* trace) {
    BilinearTrace local;
    BilinearTrace& tr = trace ? *trace : local;
    tr.feat_z = backbone_forward(z, p, &tr.z);
    tr.feat_x = backbone_forward(x, p, &tr.x);
    return make_response(xcorr(tr.feat_z, tr.feat_x), p);
}

ResponseMap sasnet_forward(const Tensor& z, const Tensor& zs, const Tensor& x,
                           const SasNetParams& p, SasNetTrace* trace) {
    SasNetTrace local;
    SasNetTrace& tr = trace ? *trace : local;
    tr.feat_z = backbone_forward(z, p, &tr.z);
    tr.feat_zs = backbone_forward(zs, p, &tr.zs);
    tr.feat_x = backbone_forward(x, p, &tr.x);
    tr.weights = attention_forward(tr.feat_zs, p, &tr.att);
    tr.weighted_z = channel_scale(tr.feat_z, tr.weights);
    tr.weighted_x = channel_scale(tr.feat_x, tr.weights);
    return make_response(xcorr(tr.weighted_z, tr.weighted_x), p);
}

void bilinear_backward(const BilinearTrace& trace, const SasNetParams& p,
                       const Tensor& d_raw, SasNetGrads& grads) {
    XcorrGrads xg = xcorr_backward(trace.feat_z, trace.feat_x, d_raw);
    backbone_backward(trace.z, p, xg.d_exemplar, grads);
    backbone_backward(trace.x, p, xg.d_instance, grads);
}

void sasnet_backward(const SasNetTrace& trace, const SasNetParams& p,
                     const Tensor& d_raw, SasNetGrads& grads) {
    XcorrGrads xg = xcorr_backward(trace.weighted_z, trace.weighted_x, d_raw);
    ChannelScaleGrads zg = channel_scale_backward(trace.feat_z, trace.weights, xg.d_exemplar);
    ChannelScaleGrads xgs = channel_scale_backward(trace.feat_x, trace.weights, xg.d_instance);

    Tensor d_weights({kFeatureChannels});
    for (int c = 0; c < kFeatureChannels; ++c)
        d_weights[c] = zg.d_weights[c] + xgs.d_weights[c];

    Tensor d_feat_zs;
    attention_backward(trace.att, trace.feat_zs.dims(), p, d_weights, grads, &d_feat_zs);

    backbone_backward(trace.z, p, zg.d_feat, grads);
    backbone_backward(trace.x, p, xgs.d_feat, grads);
    backbone_backward(trace.zs, p, d_feat_zs, grads);
}

} // namespace sasnet
