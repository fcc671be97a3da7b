#include "ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "gemm.hpp"

namespace sasnet {

namespace {

void check_rank3(const Tensor& t, const char* what) {
    if (t.rank() != 3)
        throw ShapeError(std::string(what) + " must be rank 3, got " + t.shape_str());
}

// Unrolls conv windows into a (C*kh*kw) x (H'*W') matrix, zero-padding rule.
void im2col(const Tensor& input, int kh, int kw, int stride, int pad, int oh, int ow,
            double* cols) {
    const int c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
    const std::size_t n = static_cast<std::size_t>(oh) * ow;
    for (int c = 0; c < c_in; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                double* row = cols + (((static_cast<std::size_t>(c) * kh + ky) * kw) + kx) * n;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    double* dst = row + static_cast<std::size_t>(oy) * ow;
                    if (iy < 0 || iy >= h) {
                        std::memset(dst, 0, sizeof(double) * ow);
                        continue;
                    }
                    const double* src = input.data() + (static_cast<std::size_t>(c) * h + iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

// Scatter-adds a column matrix back onto the input layout.
void col2im(const double* cols, int c_in, int h, int w, int kh, int kw, int stride,
            int pad, int oh, int ow, Tensor& out) {
    const std::size_t n = static_cast<std::size_t>(oh) * ow;
    for (int c = 0; c < c_in; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                const double* row = cols + (((static_cast<std::size_t>(c) * kh + ky) * kw) + kx) * n;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    const double* src = row + static_cast<std::size_t>(oy) * ow;
                    double* dst = out.data() + (static_cast<std::size_t>(c) * h + iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

OutSize conv_out_size(const Tensor& input, const Tensor& kernels, int stride, int pad) {
    check_rank3(input, "conv2d input");
    if (kernels.rank() != 4)
        throw ShapeError("conv2d kernels must be rank 4, got " + kernels.shape_str());
    if (kernels.dim(1) != input.dim(0))
        throw ShapeError("conv2d channel mismatch: input has " + std::to_string(input.dim(0)) +
                         " channels, kernels expect " + std::to_string(kernels.dim(1)));
    ShapeSpec spec;
    spec.h_in = input.dim(1);
    spec.w_in = input.dim(2);
    spec.h_kernel = kernels.dim(2);
    spec.w_kernel = kernels.dim(3);
    spec.h_stride = spec.w_stride = stride;
    spec.h_pad = spec.w_pad = pad;
    return out_size(spec);
}

} // namespace

Tensor conv2d_keep_cols(const Tensor& input, const Tensor& kernels, int stride,
                        int pad, std::vector<double>& cols_out) {
    const OutSize os = conv_out_size(input, kernels, stride, pad);
    const int o_ch = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
    const int k = input.dim(0) * kh * kw;
    const std::size_t n = static_cast<std::size_t>(os.h) * os.w;

    cols_out.resize(static_cast<std::size_t>(k) * n);
    im2col(input, kh, kw, stride, pad, os.h, os.w, cols_out.data());

    Tensor out({o_ch, os.h, os.w});
    blas::gemm(false, false, o_ch, static_cast<int>(n), k, 1.0, kernels.data(), k,
               cols_out.data(), static_cast<int>(n), 0.0, out.data(),
               static_cast<int>(n));
    return out;
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int pad) {
    std::vector<double> cols;
    return conv2d_keep_cols(input, kernels, stride, pad, cols);
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& kernels, int stride,
                            int pad, const Tensor& d_out, bool need_d_input,
                            const std::vector<double>* cols_in) {
    const OutSize os = conv_out_size(input, kernels, stride, pad);
    const int o_ch = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
    if (d_out.rank() != 3 || d_out.dim(0) != o_ch || d_out.dim(1) != os.h || d_out.dim(2) != os.w)
        throw ShapeError("conv2d_backward upstream gradient shape " + d_out.shape_str() +
                         " does not match output");
    const int k = input.dim(0) * kh * kw;
    const std::size_t n = static_cast<std::size_t>(os.h) * os.w;

    std::vector<double> local_cols;
    const double* cols;
    if (cols_in && cols_in->size() == static_cast<std::size_t>(k) * n) {
        cols = cols_in->data();
    } else {
        local_cols.resize(static_cast<std::size_t>(k) * n);
        im2col(input, kh, kw, stride, pad, os.h, os.w, local_cols.data());
        cols = local_cols.data();
    }

    Conv2dGrads g;
    g.d_kernels = Tensor(kernels.dims());
    // dW = dOut (O x N) * cols^T (N x K)
    blas::gemm(false, true, o_ch, k, static_cast<int>(n), 1.0, d_out.data(),
               static_cast<int>(n), cols, static_cast<int>(n), 0.0,
               g.d_kernels.data(), k);

    if (need_d_input) {
        // dcols = W^T (K x O) * dOut (O x N)
        std::vector<double> dcols(static_cast<std::size_t>(k) * n);
        blas::gemm(true, false, k, static_cast<int>(n), o_ch, 1.0, kernels.data(), k,
                   d_out.data(), static_cast<int>(n), 0.0, dcols.data(),
                   static_cast<int>(n));
        g.d_input = Tensor(input.dims());
        col2im(dcols.data(), input.dim(0), input.dim(1), input.dim(2), kh, kw, stride,
               pad, os.h, os.w, g.d_input);
    }
    return g;
}

void add_channel_bias(Tensor& t, const Tensor& bias) {
    check_rank3(t, "bias target");
    if (bias.rank() != 1 || bias.dim(0) != t.dim(0))
        throw ShapeError("bias length " + bias.shape_str() + " does not match channels of " +
                         t.shape_str());
    const std::size_t plane = static_cast<std::size_t>(t.dim(1)) * t.dim(2);
    for (int c = 0; c < t.dim(0); ++c) {
        double* p = t.data() + c * plane;
        const double b = bias[c];
        for (std::size_t i = 0; i < plane; ++i) p[i] += b;
    }
}

Tensor channel_bias_backward(const Tensor& d_out) {
    check_rank3(d_out, "bias gradient");
    Tensor db({d_out.dim(0)});
    const std::size_t plane = static_cast<std::size_t>(d_out.dim(1)) * d_out.dim(2);
    for (int c = 0; c < d_out.dim(0); ++c) {
        const double* p = d_out.data() + c * plane;
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
        db[c] = acc;
    }
    return db;
}

Tensor maxpool2d(const Tensor& input, int window, int stride,
                 std::vector<std::int64_t>* argmax) {
    check_rank3(input, "maxpool2d input");
    ShapeSpec spec;
    spec.h_in = input.dim(1);
    spec.w_in = input.dim(2);
    spec.h_kernel = spec.w_kernel = window;
    spec.h_stride = spec.w_stride = stride;
    const OutSize os = out_size(spec);

    const int c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
    Tensor out({c_in, os.h, os.w});
    if (argmax) argmax->assign(out.size(), 0);

    std::size_t oi = 0;
    for (int c = 0; c < c_in; ++c) {
        const double* plane = input.data() + static_cast<std::size_t>(c) * h * w;
        for (int oy = 0; oy < os.h; ++oy) {
            for (int ox = 0; ox < os.w; ++ox, ++oi) {
                const int y0 = oy * stride, x0 = ox * stride;
                double best = plane[static_cast<std::size_t>(y0) * w + x0];
                std::int64_t best_idx = static_cast<std::int64_t>(y0) * w + x0;
                for (int ky = 0; ky < window; ++ky) {
                    const double* row = plane + static_cast<std::size_t>(y0 + ky) * w;
                    for (int kx = 0; kx < window; ++kx) {
                        const double v = row[x0 + kx];
                        if (v > best) { // strict: ties keep the first in scan order
                            best = v;
                            best_idx = static_cast<std::int64_t>(y0 + ky) * w + x0 + kx;
                        }
                    }
                }
                out[oi] = best;
                if (argmax)
                    (*argmax)[oi] = static_cast<std::int64_t>(c) * h * w + best_idx;
            }
        }
    }
    return out;
}

Tensor maxpool2d_backward(const std::vector<std::int64_t>& argmax,
                          const std::vector<int>& input_dims, const Tensor& d_out) {
    if (argmax.size() != d_out.size())
        throw ShapeError("maxpool2d_backward: argmax record does not match gradient");
    Tensor dx(input_dims);
    for (std::size_t i = 0; i < argmax.size(); ++i)
        dx[static_cast<std::size_t>(argmax[i])] += d_out[i];
    return dx;
}

Tensor relu(const Tensor& x) {
    Tensor y(x.dims());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
    return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& d_out) {
    if (!x.same_shape(d_out))
        throw ShapeError("relu_backward shape mismatch");
    Tensor dx(x.dims());
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? d_out[i] : 0.0;
    return dx;
}

double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Tensor sigmoid(const Tensor& x) {
    Tensor y(x.dims());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid_scalar(x[i]);
    return y;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& d_out) {
    if (!y.same_shape(d_out))
        throw ShapeError("sigmoid_backward shape mismatch");
    Tensor dx(y.dims());
    for (std::size_t i = 0; i < y.size(); ++i) dx[i] = y[i] * (1.0 - y[i]) * d_out[i];
    return dx;
}

Tensor xcorr(const Tensor& exemplar, const Tensor& instance) {
    check_rank3(exemplar, "xcorr exemplar");
    check_rank3(instance, "xcorr instance");
    if (exemplar.dim(0) != instance.dim(0))
        throw ShapeError("xcorr channel mismatch: " + exemplar.shape_str() + " vs " +
                         instance.shape_str());
    const int c_in = exemplar.dim(0);
    const int zh = exemplar.dim(1), zw = exemplar.dim(2);
    const int xh = instance.dim(1), xw = instance.dim(2);
    if (zh > xh || zw > xw)
        throw ShapeError("xcorr exemplar " + exemplar.shape_str() +
                         " larger than instance " + instance.shape_str());
    const int oh = xh - zh + 1, ow = xw - zw + 1;

    Tensor out({1, oh, ow});
    for (int c = 0; c < c_in; ++c) {
        for (int ky = 0; ky < zh; ++ky) {
            const double* zrow = exemplar.data() + (static_cast<std::size_t>(c) * zh + ky) * zw;
            for (int oy = 0; oy < oh; ++oy) {
                const double* xrow =
                    instance.data() + (static_cast<std::size_t>(c) * xh + oy + ky) * xw;
                double* orow = out.data() + static_cast<std::size_t>(oy) * ow;
                for (int kx = 0; kx < zw; ++kx) {
                    const double zv = zrow[kx];
                    const double* xs = xrow + kx;
                    for (int ox = 0; ox < ow; ++ox) orow[ox] += zv * xs[ox];
                }
            }
        }
    }
    return out;
}

XcorrGrads xcorr_backward(const Tensor& exemplar, const Tensor& instance,
                          const Tensor& d_out) {
    const int c_in = exemplar.dim(0);
    const int zh = exemplar.dim(1), zw = exemplar.dim(2);
    const int xh = instance.dim(1), xw = instance.dim(2);
    const int oh = xh - zh + 1, ow = xw - zw + 1;
    if (d_out.rank() != 3 || d_out.dim(0) != 1 || d_out.dim(1) != oh || d_out.dim(2) != ow)
        throw ShapeError("xcorr_backward upstream gradient shape " + d_out.shape_str() +
                         " does not match response");

    XcorrGrads g;
    g.d_exemplar = Tensor(exemplar.dims());
    g.d_instance = Tensor(instance.dims());
    for (int c = 0; c < c_in; ++c) {
        for (int ky = 0; ky < zh; ++ky) {
            const double* xbase = instance.data() + (static_cast<std::size_t>(c) * xh) * xw;
            double* dxbase = g.d_instance.data() + (static_cast<std::size_t>(c) * xh) * xw;
            double* dzrow = g.d_exemplar.data() + (static_cast<std::size_t>(c) * zh + ky) * zw;
            const double* zrow = exemplar.data() + (static_cast<std::size_t>(c) * zh + ky) * zw;
            for (int oy = 0; oy < oh; ++oy) {
                const double* xrow = xbase + static_cast<std::size_t>(oy + ky) * xw;
                double* dxrow = dxbase + static_cast<std::size_t>(oy + ky) * xw;
                const double* grow = d_out.data() + static_cast<std::size_t>(oy) * ow;
                for (int kx = 0; kx < zw; ++kx) {
                    const double zv = zrow[kx];
                    double acc = 0.0;
                    const double* xs = xrow + kx;
                    double* dxs = dxrow + kx;
                    for (int ox = 0; ox < ow; ++ox) {
                        acc += grow[ox] * xs[ox];
                        dxs[ox] += zv * grow[ox];
                    }
                    dzrow[kx] += acc;
                }
            }
        }
    }
    return g;
}

Tensor channel_scale(const Tensor& feat, const Tensor& weights) {
    check_rank3(feat, "channel_scale feature");
    if (weights.rank() != 1 || weights.dim(0) != feat.dim(0))
        throw ShapeError("channel_scale weight length " + weights.shape_str() +
                         " does not match channels of " + feat.shape_str());
    Tensor out(feat.dims());
    const std::size_t plane = static_cast<std::size_t>(feat.dim(1)) * feat.dim(2);
    for (int c = 0; c < feat.dim(0); ++c) {
        const double wv = weights[c];
        const double* src = feat.data() + c * plane;
        double* dst = out.data() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * wv;
    }
    return out;
}

ChannelScaleGrads channel_scale_backward(const Tensor& feat, const Tensor& weights,
                                         const Tensor& d_out) {
    if (!feat.same_shape(d_out))
        throw ShapeError("channel_scale_backward shape mismatch");
    ChannelScaleGrads g;
    g.d_feat = Tensor(feat.dims());
    g.d_weights = Tensor(weights.dims());
    const std::size_t plane = static_cast<std::size_t>(feat.dim(1)) * feat.dim(2);
    for (int c = 0; c < feat.dim(0); ++c) {
        const double wv = weights[c];
        const double* f = feat.data() + c * plane;
        const double* go = d_out.data() + c * plane;
        double* df = g.d_feat.data() + c * plane;
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
            df[i] = wv * go[i];
            acc += f[i] * go[i];
        }
        g.d_weights[c] = acc;
    }
    return g;
}

namespace {

double keys_weight(double t) {
    t = std::fabs(t);
    if (t <= 1.0) return (1.5 * t - 2.5) * t * t + 1.0; // (a+2)t^3 - (a+3)t^2 + 1, a = -0.5
    if (t < 2.0) return -0.5 * (((t - 5.0) * t + 8.0) * t - 4.0);
    return 0.0;
}

struct Taps {
    int idx[4];
    double w[4];
};

// Output cell j samples input coordinate (j + 0.5)/factor - 0.5, clamped taps.
std::vector<Taps> bicubic_taps(int in_n, int factor) {
    std::vector<Taps> taps(static_cast<std::size_t>(in_n) * factor);
    for (int j = 0; j < in_n * factor; ++j) {
        const double src = (j + 0.5) / factor - 0.5;
        const int base = static_cast<int>(std::floor(src));
        Taps t;
        for (int k = 0; k < 4; ++k) {
            const int i = base - 1 + k;
            t.idx[k] = std::clamp(i, 0, in_n - 1);
            t.w[k] = keys_weight(src - i);
        }
        taps[j] = t;
    }
    return taps;
}

} // namespace

Tensor upsample_bicubic(const Tensor& map, int factor) {
    check_rank3(map, "upsample input");
    if (factor < 1)
        throw ShapeError("upsample factor must be >= 1");
    const int c_in = map.dim(0), h = map.dim(1), w = map.dim(2);
    const auto col_taps = bicubic_taps(w, factor);
    const auto row_taps = bicubic_taps(h, factor);
    const int ow = w * factor, oh = h * factor;

    Tensor horiz({c_in, h, ow});
    for (int c = 0; c < c_in; ++c) {
        for (int y = 0; y < h; ++y) {
            const double* src = map.data() + (static_cast<std::size_t>(c) * h + y) * w;
            double* dst = horiz.data() + (static_cast<std::size_t>(c) * h + y) * ow;
            for (int x = 0; x < ow; ++x) {
                const Taps& t = col_taps[x];
                dst[x] = t.w[0] * src[t.idx[0]] + t.w[1] * src[t.idx[1]] +
                         t.w[2] * src[t.idx[2]] + t.w[3] * src[t.idx[3]];
            }
        }
    }

    Tensor out({c_in, oh, ow});
    for (int c = 0; c < c_in; ++c) {
        const double* plane = horiz.data() + static_cast<std::size_t>(c) * h * ow;
        for (int y = 0; y < oh; ++y) {
            const Taps& t = row_taps[y];
            const double* r0 = plane + static_cast<std::size_t>(t.idx[0]) * ow;
            const double* r1 = plane + static_cast<std::size_t>(t.idx[1]) * ow;
            const double* r2 = plane + static_cast<std::size_t>(t.idx[2]) * ow;
            const double* r3 = plane + static_cast<std::size_t>(t.idx[3]) * ow;
            double* dst = out.data() + (static_cast<std::size_t>(c) * oh + y) * ow;
            for (int x = 0; x < ow; ++x)
                dst[x] = t.w[0] * r0[x] + t.w[1] * r1[x] + t.w[2] * r2[x] + t.w[3] * r3[x];
        }
    }
    return out;
}

} // namespace sasnet
