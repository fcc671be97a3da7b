#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>

#include "gemm.hpp"
#include "net.hpp"
#include "ops.hpp"
#include "train.hpp"

namespace sasnet {

namespace {

constexpr double kStep = 1e-5;

double rel_err(double a, double b) {
    const double denom = std::max({std::fabs(a), std::fabs(b), 1e-7});
    return std::fabs(a - b) / denom;
}

double central_diff(const std::function<double()>& f, double* x) {
    const double orig = *x;
    *x = orig + kStep;
    const double fp = f();
    *x = orig - kStep;
    const double fm = f();
    *x = orig;
    return (fp - fm) / (2.0 * kStep);
}

void fill_uniform(Tensor& t, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = d(rng);
}

// Keeps values away from relu/maxpool kinks so the finite difference stays on
// one side of the nondifferentiability.
void nudge_from_zero(Tensor& t, double margin = 1e-3) {
    for (std::size_t i = 0; i < t.size(); ++i)
        if (std::fabs(t[i]) < margin) t[i] = t[i] < 0.0 ? -margin : margin;
}

double weighted_sum(const Tensor& t, const Tensor& g) {
    double acc = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) acc += t[i] * g[i];
    return acc;
}

struct Harness {
    std::uint64_t seed;
    std::string fault;
    std::vector<GradCheckRow> rows;

    void record(const std::string& op, double err) {
        for (GradCheckRow& r : rows)
            if (r.op == op) {
                r.max_rel_err = std::max(r.max_rel_err, err);
                return;
            }
        rows.push_back({op, err, false});
    }

    double grad_err(const std::function<double()>& f, Tensor& input,
                    const Tensor& analytic) {
        double worst = 0.0;
        for (std::size_t i = 0; i < input.size(); ++i)
            worst = std::max(worst, rel_err(analytic[i], central_diff(f, &input[i])));
        return worst;
    }

    double grad_err_sampled(const std::function<double()>& f, double* data,
                            const Tensor& analytic, const std::vector<std::size_t>& idx) {
        double worst = 0.0;
        for (std::size_t i : idx)
            worst = std::max(worst, rel_err(analytic[i], central_diff(f, &data[i])));
        return worst;
    }
};

void check_conv(Harness& h, std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor input({2, 7, 7}), kernels({3, 2, 3, 3}), g({3, 3, 3});
    fill_uniform(input, rng);
    fill_uniform(kernels, rng);
    fill_uniform(g, rng);
    auto f = [&] { return weighted_sum(conv2d(input, kernels, 2, 0), g); };
    Conv2dGrads cg = conv2d_backward(input, kernels, 2, 0, g);
    h.record("conv2d.input", h.grad_err(f, input, cg.d_input));
    h.record("conv2d.kernels", h.grad_err(f, kernels, cg.d_kernels));

    Tensor bias({3});
    fill_uniform(bias, rng);
    auto fb = [&] {
        Tensor out = conv2d(input, kernels, 2, 0);
        add_channel_bias(out, bias);
        return weighted_sum(out, g);
    };
    h.record("conv2d.bias", h.grad_err(fb, bias, channel_bias_backward(g)));
}

void check_maxpool(Harness& h, std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor input({1, 9, 9}), g({1, 4, 4});
    fill_uniform(input, rng);
    fill_uniform(g, rng);
    // separate values so +-1e-5 probes cannot change the winner
    for (std::size_t i = 0; i < input.size(); ++i) input[i] += 1e-3 * static_cast<double>(i);
    auto f = [&] { return weighted_sum(maxpool2d(input, 3, 2), g); };
    std::vector<std::int64_t> arg;
    maxpool2d(input, 3, 2, &arg);
    const Tensor dx = maxpool2d_backward(arg, input.dims(), g);
    h.record("maxpool2d", h.grad_err(f, input, dx));
}

void check_relu(Harness& h, std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor input({1, 5, 6}), g({1, 5, 6});
    fill_uniform(input, rng);
    fill_uniform(g, rng);
    nudge_from_zero(input);
    auto f = [&] { return weighted_sum(relu(input), g); };
    h.record("relu", h.grad_err(f, input, relu_backward(input, g)));
}

void check_sigmoid(Harness& h, std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor input({1, 4, 8}), g({1, 4, 8});
    fill_uniform(input, rng, -3.0, 3.0);
    fill_uniform(g, rng);
    auto f = [&] { return weighted_sum(sigmoid(input), g); };
    Tensor dx = sigmoid_backward(sigmoid(input), g);
    if (h.fault == "sigmoid")
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= 1.01;
    h.record("sigmoid", h.grad_err(f, input, dx));
}

void check_xcorr(Harness& h, std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor ex({2, 3, 2}), in({2, 6, 7});
    fill_uniform(ex, rng);
    fill_uniform(in, rng);
    Tensor g({1, 4, 6});
    fill_uniform(g, rng);
    auto f = [&] { return weighted_sum(xcorr(ex, in), g); };
    XcorrGrads xg = xcorr_backward(ex, in, g);
    h.record("xcorr.exemplar", h.grad_err(f, ex, xg.d_exemplar));
    h.record("xcorr.instance", h.grad_err(f, in, xg.d_instance));
}

void check_channel_scale(Harness& h, std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor feat({4, 3, 5}), w({4}), g({4, 3, 5});
    fill_uniform(feat, rng);
    fill_uniform(w, rng);
    fill_uniform(g, rng);
    auto f = [&] { return weighted_sum(channel_scale(feat, w), g); };
    ChannelScaleGrads cg = channel_scale_backward(feat, w, g);
    h.record("channel_scale.feat", h.grad_err(f, feat, cg.d_feat));
    h.record("channel_scale.weights", h.grad_err(f, w, cg.d_weights));
}

void check_attention(Harness& h, std::uint64_t s) {
    std::mt19937_64 rng(s);
    SasNetParams p = init_params(s);
    Tensor feat({kFeatureChannels, 22, 22}), g({kFeatureChannels});
    fill_uniform(feat, rng);
    fill_uniform(g, rng);
    for (std::size_t i = 0; i < feat.size(); ++i) feat[i] += 1e-4 * static_cast<double>(i % 487);
    auto f = [&] { return weighted_sum(attention_forward(feat, p), g); };

    AttentionTrace tr;
    attention_forward(feat, p, &tr);
    SasNetGrads grads = make_grads();
    Tensor d_feat;
    attention_backward(tr, feat.dims(), p, g, grads, &d_feat);

    std::uniform_int_distribution<std::size_t> pick_f(0, feat.size() - 1);
    std::vector<std::size_t> feat_idx;
    for (int i = 0; i < 64; ++i) feat_idx.push_back(pick_f(rng));
    double err = h.grad_err_sampled(f, feat.data(), d_feat, feat_idx);

    std::uniform_int_distribution<std::size_t> pick_w(0, p.att_w.size() - 1);
    std::vector<std::size_t> w_idx;
    for (int i = 0; i < 64; ++i) w_idx.push_back(pick_w(rng));
    err = std::max(err, h.grad_err_sampled(f, p.att_w.data(), grads.att_w, w_idx));
    h.record("attention", err);
}

void check_loss(Harness& h, std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor r({1, 5, 7});
    fill_uniform(r, rng, -4.0, 4.0);
    const Tensor y = gaussian_label(5, 7, 2.0);
    auto f = [&] { return map_loss(r, y); };
    h.record("loss.map", h.grad_err(f, r, map_loss_backward(r, y)));
}

// Shrunken-input replica losses. Input sizes keep every layer alive while the
// semantic branch (needed only for stage 2) carries the one mandatory
// full-size 255 input.
Tensor random_image(std::mt19937_64& rng, int h, int w) {
    Tensor img({3, h, w});
    std::uniform_real_distribution<double> d(0.0, 1.0);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = d(rng);
    return img;
}

double stage1_loss(const PairSample& pair, const SasNetParams& p, double sigma) {
    ResponseMap resp = bilinear_forward(pair.z, pair.x, p);
    Tensor squashed(resp.raw.dims());
    for (std::size_t i = 0; i < resp.raw.size(); ++i)
        squashed[i] = p.response_scale * resp.raw[i] + p.response_bias;
    return map_loss(squashed, gaussian_label(squashed.dim(1), squashed.dim(2), sigma));
}

double stage2_loss(const PairSample& pair, const SasNetParams& p, double sigma) {
    ResponseMap resp = sasnet_forward(pair.z, pair.zs, pair.x, p);
    Tensor squashed(resp.raw.dims());
    for (std::size_t i = 0; i < resp.raw.size(); ++i)
        squashed[i] = p.response_scale * resp.raw[i] + p.response_bias;
    return map_loss(squashed, gaussian_label(squashed.dim(1), squashed.dim(2), sigma));
}

// Per-tensor probes at components with measurable gradient magnitude. Tiny
// components sit below the finite-difference noise floor of the deep loss, and
// joint (directional) probes cross relu/maxpool kinks, so each probe perturbs
// one well-scaled component at a time.
void check_end_to_end(Harness& h, std::uint64_t seed, int stage) {
    std::mt19937_64 rng(seed * 2654435761u + stage);
    SasNetParams p = init_params(seed + 17);
    // a response scale large enough that loss sensitivities are well above
    // finite-difference noise
    p.response_scale = 0.05;
    p.response_bias = -0.1;

    PairSample pair;
    pair.z = random_image(rng, 87, 87);
    pair.x = random_image(rng, 95, 95);
    if (stage == 2) pair.zs = random_image(rng, 255, 255);
    const double sigma = 1.5;

    SasNetGrads grads = make_grads();
    if (stage == 1)
        pair_loss_grads_stage1(pair, p, sigma, grads);
    else
        pair_loss_grads_stage2(pair, p, sigma, grads);

    auto f = [&] { return stage == 1 ? stage1_loss(pair, p, sigma) : stage2_loss(pair, p, sigma); };

    auto prefs = param_refs(p);
    auto grefs = grad_refs(grads);
    const std::string tag = stage == 1 ? "stage1." : "stage2.";
    for (std::size_t t = 0; t < prefs.size(); ++t) {
        if (stage == 1 && prefs[t].group == ParamGroup::attention) continue; // not in graph

        const double* g = grefs[t].data;
        std::size_t max_idx = 0;
        double max_g = 0.0;
        for (std::size_t i = 0; i < prefs[t].size; ++i)
            if (std::fabs(g[i]) > max_g) {
                max_g = std::fabs(g[i]);
                max_idx = i;
            }
        std::vector<std::size_t> probes{max_idx};
        if (prefs[t].size > 1 && max_g > 0.0) {
            std::uniform_int_distribution<std::size_t> pick(0, prefs[t].size - 1);
            for (int tries = 0; tries < 64 && probes.size() < 3; ++tries) {
                const std::size_t i = pick(rng);
                if (std::fabs(g[i]) >= 0.1 * max_g && i != max_idx) probes.push_back(i);
            }
        }
        double worst = 0.0;
        for (std::size_t i : probes) {
            const double fd = central_diff(f, &prefs[t].data[i]);
            worst = std::max(worst, rel_err(g[i], fd));
        }
        h.record(tag + prefs[t].name, worst);
    }
}

} // namespace

GradCheckResult run_gradcheck(std::uint64_t seed, const std::string& inject_fault_op) {
    const bool saved_fast32 = blas::fast32();
    blas::set_fast32(false); // verification is 64-bit
    Harness h;
    h.seed = seed;
    h.fault = inject_fault_op;

    for (std::uint64_t s = 0; s < 20; ++s) {
        const std::uint64_t k = seed + s;
        check_conv(h, k);
        check_maxpool(h, k);
        check_relu(h, k);
        check_sigmoid(h, k);
        check_xcorr(h, k);
        check_channel_scale(h, k);
        check_loss(h, k);
    }
    check_attention(h, seed);
    check_attention(h, seed + 1);
    // the end-to-end replica checks are the expensive part of the suite; seed
    // counts are chosen to keep the whole run inside two minutes
    for (std::uint64_t s = 0; s < 4; ++s) check_end_to_end(h, seed + s, 1);
    check_end_to_end(h, seed, 2);

    GradCheckResult res;
    res.all_pass = true;
    for (GradCheckRow& r : h.rows) {
        r.pass = r.max_rel_err < kGradCheckTolerance;
        res.all_pass = res.all_pass && r.pass;
        char line[160];
        std::snprintf(line, sizeof(line), "%-24s max_rel_err=%.3e  %s\n", r.op.c_str(),
                      r.max_rel_err, r.pass ? "ok" : "FAIL");
        res.report += line;
    }
    char tail[64];
    std::snprintf(tail, sizeof(tail), "gradcheck %s (tolerance %.0e)\n",
                  res.all_pass ? "PASSED" : "FAILED", kGradCheckTolerance);
    res.report += tail;
    res.rows = std::move(h.rows);
    blas::set_fast32(saved_fast32);
    return res;
}

} // namespace sasnet
